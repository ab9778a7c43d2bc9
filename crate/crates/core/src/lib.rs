pub mod checkpoint;
pub mod disk;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod money;
pub mod wal;
pub mod workload;
