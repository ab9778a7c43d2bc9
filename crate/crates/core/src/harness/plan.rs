use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::checkpoint::CheckpointPolicy;
use crate::money::Money;
use crate::wal::Lsn;
use crate::workload::{TxnRequest, TxnStatus};

/// Launch offsets of the reference run: the second stream six minutes in,
/// each later one a hundred seconds after its predecessor.
pub const FIRST_STAGGER: Duration = Duration::from_secs(360);
pub const NEXT_STAGGER: Duration = Duration::from_secs(100);
pub const DEFAULT_STAGGER_SCALE: f64 = 0.1;
pub const DEFAULT_SAMPLE_PERIOD: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Warmup {
    #[default]
    None,
    SequentialScan,
    Random,
}

impl FromStr for Warmup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(Warmup::None),
            "seq" | "sequential" | "sequential_scan" => Ok(Warmup::SequentialScan),
            "rand" | "random" => Ok(Warmup::Random),
            _ => Err(format!("unknown warmup mode {s:?} (none, seq, rand)")),
        }
    }
}

impl fmt::Display for Warmup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Warmup::None => "none",
            Warmup::SequentialScan => "seq",
            Warmup::Random => "rand",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CheckpointTrigger {
    /// The recovery-interval scheduler decides.
    Scheduled,
    /// One checkpoint this long after the run starts.
    At(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Checkpointing {
    #[default]
    Off,
    On { policy: CheckpointPolicy, trigger: CheckpointTrigger },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub streams: usize,
    pub txns_per_stream: u64,
    /// Launch delay of each stream from the run start.
    pub stagger: Vec<Duration>,
    pub warmup: Warmup,
    pub checkpointing: Checkpointing,
    /// Pass each request and response through the 100-byte message codec.
    pub messages: bool,
    pub seed: u64,
    pub local_fraction: f64,
    pub sample_period: Duration,
    /// Streams stop issuing new requests once this much time has passed.
    pub time_limit: Option<Duration>,
    /// Replaces the generator: stream `i` of `n` runs entries `i, i+n, ...`
    /// and `txns_per_stream` is ignored.
    pub fixed_requests: Option<Arc<[TxnRequest]>>,
}

impl RunPlan {
    /// `streams` streams launched together.
    pub fn new(streams: usize, txns_per_stream: u64) -> RunPlan {
        RunPlan {
            streams,
            txns_per_stream,
            stagger: vec![Duration::ZERO; streams],
            warmup: Warmup::None,
            checkpointing: Checkpointing::Off,
            messages: false,
            seed: 0,
            local_fraction: 0.85,
            sample_period: DEFAULT_SAMPLE_PERIOD,
            time_limit: None,
            fixed_requests: None,
        }
    }

    /// The reference launch schedule compressed by `scale`.
    pub fn staggered(streams: usize, txns_per_stream: u64, scale: f64) -> RunPlan {
        RunPlan { stagger: reference_stagger(streams, scale), ..RunPlan::new(streams, txns_per_stream) }
    }

    /// The same requests, dealt round-robin over `streams` streams.
    pub fn fixed(streams: usize, requests: impl Into<Arc<[TxnRequest]>>) -> RunPlan {
        RunPlan { fixed_requests: Some(requests.into()), ..RunPlan::new(streams, 0) }
    }

    pub fn total_txns(&self) -> u64 {
        match &self.fixed_requests {
            Some(r) => r.len() as u64,
            None => self.streams as u64 * self.txns_per_stream,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.streams == 0 {
            return Err("at least one stream is required".into());
        }
        if self.stagger.len() != self.streams {
            return Err(format!("{} launch delays for {} streams", self.stagger.len(), self.streams));
        }
        if self.stagger[0] != Duration::ZERO {
            return Err("the first stream must launch at time zero".into());
        }
        if self.stagger.windows(2).any(|w| w[1] < w[0]) {
            return Err("launch delays must be non-decreasing".into());
        }
        if self.sample_period.is_zero() {
            return Err("sample period must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.local_fraction) {
            return Err(format!("local fraction {} outside [0, 1]", self.local_fraction));
        }
        if let Checkpointing::On { policy, .. } = &self.checkpointing {
            policy.validate()?;
        }
        Ok(())
    }
}

/// 0, 360 s, 460 s, 560 s, ... each multiplied by `scale`.
pub fn reference_stagger(streams: usize, scale: f64) -> Vec<Duration> {
    let scale = scale.max(0.0);
    (0..streams)
        .map(|i| match i {
            0 => Duration::ZERO,
            _ => (FIRST_STAGGER + NEXT_STAGGER * (i as u32 - 1)).mul_f64(scale),
        })
        .collect()
}

/// One request's outcome as its stream saw it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TxnReceipt {
    pub stream: usize,
    pub client_tag: u64,
    pub request: TxnRequest,
    pub status: TxnStatus,
    pub new_balance: Money,
    /// Zero for aborts; set on failures whose commit record was logged.
    pub commit_lsn: Lsn,
    /// Submit to acknowledge, µs.
    pub latency_us: u64,
    /// Submit time, µs since the run started.
    pub submitted_us: u64,
}

impl TxnReceipt {
    pub fn acknowledged_us(&self) -> u64 {
        self.submitted_us + self.latency_us
    }

    pub fn is_committed(&self) -> bool {
        self.status == TxnStatus::Committed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrashSpec {
    TruncateLogAtByte(u64),
    /// A fresh uniform cut over the finished log in every trial.
    TruncateLogAtRandomByte,
    KillAfterTxn(u64),
    KillAtTime(Duration),
}

impl FromStr for CrashSpec {
    type Err = String;

    /// `truncate:N`, `truncate:random`, `kill-after:K` or `kill-at:MS`.
    fn from_str(s: &str) -> Result<Self, String> {
        let (mode, arg) = s.split_once(':').ok_or_else(|| format!("crash spec {s:?} needs MODE:ARG"))?;
        let num = || arg.parse::<u64>().map_err(|e| format!("{arg:?}: {e}"));
        match mode {
            "truncate" if arg == "random" => Ok(CrashSpec::TruncateLogAtRandomByte),
            "truncate" => Ok(CrashSpec::TruncateLogAtByte(num()?)),
            "kill-after" => Ok(CrashSpec::KillAfterTxn(num()?)),
            "kill-at" => Ok(CrashSpec::KillAtTime(Duration::from_millis(num()?))),
            _ => Err(format!("unknown crash mode {mode:?}")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_stagger_is_compressed() {
        let s = reference_stagger(4, 0.1);
        assert_eq!(s, vec![Duration::ZERO, Duration::from_secs(36), Duration::from_secs(46), Duration::from_secs(56)]);
        assert!(RunPlan::staggered(8, 10, 0.1).validate().is_ok());
    }

    #[test]
    fn bad_plans_are_rejected() {
        let mut p = RunPlan::new(2, 1);
        p.stagger = vec![Duration::ZERO];
        assert!(p.validate().is_err());
        p.stagger = vec![Duration::from_secs(1), Duration::from_secs(2)];
        assert!(p.validate().is_err());
        p.stagger = vec![Duration::ZERO, Duration::ZERO];
        assert!(p.validate().is_ok());
        assert!(RunPlan::new(0, 1).validate().is_err());
    }

    #[test]
    fn crash_specs_parse() {
        assert_eq!("truncate:512".parse(), Ok(CrashSpec::TruncateLogAtByte(512)));
        assert_eq!("truncate:random".parse(), Ok(CrashSpec::TruncateLogAtRandomByte));
        assert_eq!("kill-after:10".parse(), Ok(CrashSpec::KillAfterTxn(10)));
        assert_eq!("kill-at:250".parse(), Ok(CrashSpec::KillAtTime(Duration::from_millis(250))));
        assert!("explode:1".parse::<CrashSpec>().is_err());
    }
}
