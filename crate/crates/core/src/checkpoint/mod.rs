//! Fuzzy checkpoints, their image format and data devices, and the
//! recovery-interval scheduler.

mod device;
mod image;
mod policy;
mod writer;

use std::sync::Arc;

pub use device::{DataDevice, FileDataDevice, SimDataDevice, IMAGE_FILE};
pub use image::{CheckpointImage, ImageError, ImagePage, PageRows, IMAGE_HEADER_LEN, IMAGE_MAGIC};
pub use policy::{recovery_bound, CheckpointMode, CheckpointPolicy, SpreadThrottle};
pub use writer::{CheckpointError, CheckpointEvent, Checkpointer, Scheduler};

use crate::engine::{Bank, Engine, ScaleConfig};
use crate::money::Money;
use crate::wal::{recover, SimLogConfig, SimLogDevice, Wal, WalConfig};

/// Replay rate in records per second, measured by recovering a log of
/// `txns` transactions on a simulated device with `log` read latency.
pub fn measure_replay_rate(log: SimLogConfig, txns: u64) -> f64 {
    let cfg = ScaleConfig::new(1);
    let dev = Arc::new(SimLogDevice::new(SimLogConfig::default()));
    let wal = Wal::create(dev.clone(), WalConfig::default()).expect("sim log");
    let engine = Engine::new(Bank::create(cfg).expect("one branch"), wal);
    for i in 0..txns {
        engine
            .debit_credit(i % 10, (i * 7919) % 10_000, Money::from_micros(i as i64))
            .expect("sim commit");
    }
    let replay = SimLogDevice::from_bytes(dev.contents(), log);
    let out = recover(&replay, None, &cfg).expect("clean log recovers");
    out.replay_rate().unwrap_or(f64::INFINITY)
}
