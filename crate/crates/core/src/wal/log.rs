use std::io;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::device::LogDevice;
use super::page::{LogPage, PAGE_SIZE};
use super::record::{LogRecord, RecordBody, MAX_RECORD_LEN};
use super::Lsn;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum WalError {
    #[error("log device full")]
    Full,
    #[error("log closed")]
    Closed,
    #[error("log halted after device failure: {0}")]
    Halted(String),
    #[error("lsn {0} has not been appended")]
    UnknownLsn(Lsn),
    #[error("log device error: {0}")]
    Device(String),
}

impl From<io::Error> for WalError {
    fn from(e: io::Error) -> Self {
        WalError::Device(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WalConfig {
    /// Device size limit; appends that would need a page past it fail.
    pub capacity_bytes: Option<u64>,
}

/// Log flush counters since the last reset.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlushStats {
    pub flush_count: u64,
    pub committed_txn_count: u64,
    /// Bytes handed to the device (whole pages, rewrites included).
    pub bytes_written: u64,
    pub appended_records: u64,
    /// Serialized record bytes appended.
    pub appended_bytes: u64,
}

impl FlushStats {
    pub fn txns_per_flush(&self) -> Option<f64> {
        (self.flush_count > 0).then(|| self.committed_txn_count as f64 / self.flush_count as f64)
    }

    pub fn since(&self, earlier: &FlushStats) -> FlushStats {
        FlushStats {
            flush_count: self.flush_count - earlier.flush_count,
            committed_txn_count: self.committed_txn_count - earlier.committed_txn_count,
            bytes_written: self.bytes_written - earlier.bytes_written,
            appended_records: self.appended_records - earlier.appended_records,
            appended_bytes: self.appended_bytes - earlier.appended_bytes,
        }
    }
}

#[derive(Default)]
struct Counters {
    flush_count: AtomicU64,
    committed_txn_count: AtomicU64,
    bytes_written: AtomicU64,
    appended_records: AtomicU64,
    appended_bytes: AtomicU64,
}

/// Where a reopened log continues: the page holding the last valid record
/// and the next lsn to hand out.
#[derive(Debug, Clone)]
pub struct LogTail {
    pub page_index: u64,
    pub page: LogPage,
    pub next_lsn: Lsn,
}

impl LogTail {
    pub fn empty() -> Self {
        LogTail { page_index: 0, page: LogPage::new(1), next_lsn: 1 }
    }
}

struct LogBuffer {
    next_lsn: Lsn,
    current: LogPage,
    current_index: u64,
    /// Payload length of `current` already handed to a flush.
    current_flushed_len: usize,
    sealed: Vec<(u64, LogPage)>,
    pending_commits: u64,
    closed: bool,
    scratch: Vec<u8>,
}

struct FlushState {
    durable_lsn: Lsn,
    flushing: bool,
    error: Option<String>,
}

/// Redo log with natural-batching group commit.
///
/// Appends go to an in-memory tail page. `force_to` makes a prefix durable:
/// the first waiter to find no flush in progress becomes the flusher and
/// writes everything appended so far; waiters arriving meanwhile queue up and
/// are covered together by the next flush.
pub struct Wal {
    device: Arc<dyn LogDevice>,
    config: WalConfig,
    buffer: Mutex<LogBuffer>,
    flush: Mutex<FlushState>,
    flushed: Condvar,
    halted: AtomicBool,
    counters: Counters,
}

impl Wal {
    /// A log on an empty device.
    pub fn create(device: Arc<dyn LogDevice>, config: WalConfig) -> Result<Wal, WalError> {
        device.truncate_pages(0)?;
        Self::resume(device, LogTail::empty(), config)
    }

    /// Continues an existing log after recovery. The tail page is rewritten
    /// with only its valid records and anything after it is dropped.
    pub fn resume(
        device: Arc<dyn LogDevice>,
        tail: LogTail,
        config: WalConfig,
    ) -> Result<Wal, WalError> {
        let mut current = tail.page;
        let flushed_len = current.payload_len();
        if !current.is_empty() {
            current.seal();
            device.write_page(tail.page_index, current.as_bytes())?;
            device.truncate_pages(tail.page_index + 1)?;
            device.sync()?;
        } else {
            current = LogPage::new(tail.next_lsn);
            device.truncate_pages(tail.page_index)?;
        }
        Ok(Wal {
            device,
            config,
            buffer: Mutex::new(LogBuffer {
                next_lsn: tail.next_lsn,
                current,
                current_index: tail.page_index,
                current_flushed_len: flushed_len,
                sealed: Vec::new(),
                pending_commits: 0,
                closed: false,
                scratch: Vec::with_capacity(MAX_RECORD_LEN),
            }),
            flush: Mutex::new(FlushState {
                durable_lsn: tail.next_lsn - 1,
                flushing: false,
                error: None,
            }),
            flushed: Condvar::new(),
            halted: AtomicBool::new(false),
            counters: Counters::default(),
        })
    }

    pub fn device(&self) -> &Arc<dyn LogDevice> {
        &self.device
    }

    /// Buffers one record and returns its lsn. Not durable until `force_to`.
    pub fn append(&self, txn_id: u64, body: RecordBody) -> Result<Lsn, WalError> {
        self.append_batch(txn_id, &[body])
    }

    /// Buffers records with consecutive lsns, all or nothing. Returns the
    /// first lsn.
    pub fn append_batch(&self, txn_id: u64, bodies: &[RecordBody]) -> Result<Lsn, WalError> {
        let mut buf = self.buffer.lock();
        self.check_open(&buf)?;
        if let Some(cap) = self.config.capacity_bytes {
            let mut remaining = buf.current.remaining();
            let mut index = buf.current_index;
            for b in bodies {
                let len = b.encoded_len();
                if len > remaining {
                    index += 1;
                    remaining = LogPage::new(0).remaining();
                }
                remaining -= len;
            }
            if (index + 1) * PAGE_SIZE as u64 > cap {
                return Err(WalError::Full);
            }
        }
        let first = buf.next_lsn;
        let mut bytes = 0u64;
        let buf = &mut *buf;
        for body in bodies {
            let rec = LogRecord { lsn: buf.next_lsn, txn_id, body: *body };
            buf.scratch.clear();
            rec.encode_into(&mut buf.scratch);
            if buf.scratch.len() > buf.current.remaining() {
                let mut full = std::mem::replace(&mut buf.current, LogPage::new(buf.next_lsn));
                full.seal();
                buf.sealed.push((buf.current_index, full));
                buf.current_index += 1;
                buf.current_flushed_len = 0;
            }
            buf.current.push(&buf.scratch);
            bytes += buf.scratch.len() as u64;
            buf.next_lsn += 1;
            if matches!(body, RecordBody::Commit) {
                buf.pending_commits += 1;
            }
        }
        self.counters.appended_records.fetch_add(bodies.len() as u64, Ordering::Relaxed);
        self.counters.appended_bytes.fetch_add(bytes, Ordering::Relaxed);
        Ok(first)
    }

    fn check_open(&self, buf: &LogBuffer) -> Result<(), WalError> {
        if self.halted.load(Ordering::Acquire) {
            return Err(WalError::Halted(self.flush.lock().error.clone().unwrap_or_default()));
        }
        if buf.closed {
            return Err(WalError::Closed);
        }
        Ok(())
    }

    /// Blocks until every record with lsn ≤ `lsn` is on the device.
    pub fn force_to(&self, lsn: Lsn) -> Result<(), WalError> {
        if lsn >= self.buffer.lock().next_lsn {
            return Err(WalError::UnknownLsn(lsn));
        }
        let mut st = self.flush.lock();
        loop {
            if let Some(err) = &st.error {
                return Err(WalError::Halted(err.clone()));
            }
            if st.durable_lsn >= lsn {
                return Ok(());
            }
            if st.flushing {
                self.flushed.wait(&mut st);
                continue;
            }
            st.flushing = true;
            drop(st);
            let result = self.flush_once();
            st = self.flush.lock();
            st.flushing = false;
            match result {
                Ok(upto) => st.durable_lsn = st.durable_lsn.max(upto),
                Err(e) => {
                    st.error = Some(e.to_string());
                    self.halted.store(true, Ordering::Release);
                }
            }
            self.flushed.notify_all();
        }
    }

    /// Writes everything appended so far; returns the lsn it covers.
    fn flush_once(&self) -> io::Result<Lsn> {
        let (pages, upto, commits) = {
            let mut buf = self.buffer.lock();
            let upto = buf.next_lsn - 1;
            let mut pages = std::mem::take(&mut buf.sealed);
            let len = buf.current.payload_len();
            if len > buf.current_flushed_len {
                let mut copy = buf.current.clone();
                copy.seal();
                pages.push((buf.current_index, copy));
                buf.current_flushed_len = len;
            }
            (pages, upto, std::mem::take(&mut buf.pending_commits))
        };
        for (index, page) in &pages {
            self.device.write_page(*index, page.as_bytes())?;
        }
        self.device.sync()?;
        self.counters.flush_count.fetch_add(1, Ordering::Relaxed);
        self.counters.committed_txn_count.fetch_add(commits, Ordering::Relaxed);
        self.counters
            .bytes_written
            .fetch_add((pages.len() * PAGE_SIZE) as u64, Ordering::Relaxed);
        Ok(upto)
    }

    /// Forces everything appended so far.
    pub fn flush_all(&self) -> Result<(), WalError> {
        match self.last_lsn() {
            0 => Ok(()),
            lsn => self.force_to(lsn),
        }
    }

    pub fn last_lsn(&self) -> Lsn {
        self.buffer.lock().next_lsn - 1
    }

    pub fn durable_lsn(&self) -> Lsn {
        self.flush.lock().durable_lsn
    }

    pub fn is_halted(&self) -> bool {
        self.halted.load(Ordering::Acquire)
    }

    /// Flushes and refuses further appends.
    pub fn close(&self) -> Result<(), WalError> {
        let res = self.flush_all();
        self.buffer.lock().closed = true;
        res
    }

    pub fn flush_stats(&self) -> FlushStats {
        let c = &self.counters;
        FlushStats {
            flush_count: c.flush_count.load(Ordering::Relaxed),
            committed_txn_count: c.committed_txn_count.load(Ordering::Relaxed),
            bytes_written: c.bytes_written.load(Ordering::Relaxed),
            appended_records: c.appended_records.load(Ordering::Relaxed),
            appended_bytes: c.appended_bytes.load(Ordering::Relaxed),
        }
    }

    pub fn reset_stats(&self) {
        let c = &self.counters;
        for a in [
            &c.flush_count,
            &c.committed_txn_count,
            &c.bytes_written,
            &c.appended_records,
            &c.appended_bytes,
        ] {
            a.store(0, Ordering::Relaxed);
        }
    }
}
