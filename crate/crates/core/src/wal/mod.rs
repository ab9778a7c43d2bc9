//! Write-ahead redo log: record and page formats, log devices, group commit
//! and recovery.

mod device;
mod log;
mod page;
mod record;
mod recovery;

pub type Lsn = u64;

pub use device::{FileLogDevice, LogDevice, SimLogConfig, SimLogDevice};
pub use log::{FlushStats, LogTail, Wal, WalConfig, WalError};
pub use page::{LogPage, PAGE_HEADER_LEN, PAGE_PAYLOAD_CAPACITY, PAGE_SIZE};
pub use record::{LogRecord, RecordBody, RecordError, RecordKind};
pub use recovery::{recover, RecoveryError, RecoveryOutcome, ScanStop};
