//! Benchmark driver: staged multi-stream runs, warm-up, crash injection and
//! the run summary.

mod crash;
mod plan;
mod rig;
mod run;
mod warmup;

use thiserror::Error;

pub use crash::{commit_ends, crash_test, state_diff, CrashVerdict, TrialResult};
pub use plan::{
    reference_stagger, CheckpointTrigger, Checkpointing, CrashSpec, RunPlan, TxnReceipt, Warmup,
    DEFAULT_SAMPLE_PERIOD, DEFAULT_STAGGER_SCALE, FIRST_STAGGER, NEXT_STAGGER,
};
pub use rig::{
    dir_spec, init_dir, open_dir, read_dir_config, DataSpec, LogSpec, Recovered, Rig, RigSpec, StoredConfig,
    CONFIG_FILE, LOG_FILE,
};
pub use run::{run, RunOutcome};
pub use warmup::{warmup, WarmupStats, RANDOM_DRAWS_PER_ROW, RANDOM_TARGET};

use crate::checkpoint::{CheckpointError, ImageError};
use crate::engine::EngineError;
use crate::metrics::{emit_summary, RunReport};
use crate::wal::{RecoveryError, WalError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{0}")]
    Plan(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("log: {0}")]
    Wal(#[from] WalError),
    #[error("recovery: {0}")]
    Recovery(#[from] RecoveryError),
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(#[from] serde_json::Error),
}

/// Timing line followed by latency, rule-check and checkpoint lines.
pub fn summary(report: &RunReport) -> String {
    emit_summary(report)
}
