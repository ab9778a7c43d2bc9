use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointMode {
    /// Issue page writes as fast as the device queue admits them.
    Burst,
    /// Pace page writes across the interval and back off on slow responses.
    Spread,
}

impl fmt::Display for CheckpointMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckpointMode::Burst => "burst",
            CheckpointMode::Spread => "spread",
        })
    }
}

impl FromStr for CheckpointMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "burst" => Ok(CheckpointMode::Burst),
            "spread" => Ok(CheckpointMode::Spread),
            other => Err(format!("unknown checkpoint mode {other:?}")),
        }
    }
}

/// Outstanding-IO control for spread checkpoints: multiplicative decrease
/// when a write's response time exceeds `slowdown` times the moving baseline,
/// additive increase otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpreadThrottle {
    pub max_outstanding: usize,
    pub initial_outstanding: usize,
    pub slowdown: f64,
    /// Weight of the newest response time in the baseline average.
    pub baseline_alpha: f64,
}

impl Default for SpreadThrottle {
    fn default() -> Self {
        SpreadThrottle { max_outstanding: 8, initial_outstanding: 2, slowdown: 2.0, baseline_alpha: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub mode: CheckpointMode,
    pub recovery_interval: Duration,
    pub burst_depth: usize,
    pub throttle: SpreadThrottle,
    /// Share of the recovery interval a spread checkpoint may take.
    pub spread_fraction: f64,
    /// Log records replayed per second during recovery, used to turn log
    /// length into a recovery time estimate.
    pub replay_rate: f64,
}

impl CheckpointPolicy {
    pub fn new(mode: CheckpointMode, recovery_interval: Duration) -> Self {
        CheckpointPolicy { mode, recovery_interval, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.recovery_interval.is_zero() {
            return Err("recovery interval must be positive".into());
        }
        if self.burst_depth == 0 || self.throttle.max_outstanding == 0 {
            return Err("outstanding IO limits must be positive".into());
        }
        if !(self.spread_fraction > 0.0 && self.spread_fraction <= 1.0) {
            return Err("spread fraction must be in (0, 1]".into());
        }
        if !(self.replay_rate > 0.0) {
            return Err("replay rate must be positive".into());
        }
        Ok(())
    }

    pub fn spread_window(&self) -> Duration {
        self.recovery_interval.mul_f64(self.spread_fraction)
    }
}

impl Default for CheckpointPolicy {
    fn default() -> Self {
        CheckpointPolicy {
            mode: CheckpointMode::Spread,
            recovery_interval: Duration::from_secs(600),
            burst_depth: 100,
            throttle: SpreadThrottle::default(),
            spread_fraction: 0.5,
            replay_rate: 1_000_000.0,
        }
    }
}

/// Estimated redo time after a crash now: records past the image's
/// `checkpoint_begin` divided by the replay rate.
pub fn recovery_bound(last_lsn: u64, begin_lsn: u64, replay_rate: f64) -> Duration {
    let records = last_lsn.saturating_sub(begin_lsn);
    if records == 0 || replay_rate <= 0.0 {
        return Duration::ZERO;
    }
    Duration::from_secs_f64(records as f64 / replay_rate)
}
