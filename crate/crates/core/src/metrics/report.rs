use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::percentile::Percentiles;
use super::sample::Sample;
use crate::engine::ScaleConfig;

pub const ACCOUNTS_PER_TPS: u64 = 100_000;
pub const TERMINALS_PER_TPS: u64 = 100;
pub const RESPONSE_TIME_LIMIT: Duration = Duration::from_secs(2);
/// Samples before a checkpoint whose median is the steady-state baseline.
pub const BASELINE_SAMPLES: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingVerdict {
    pub measured_tps: f64,
    pub required_accounts: u64,
    pub required_terminals: u64,
    pub configured_accounts: u64,
    pub compliant: bool,
}

/// TPC scaling rule: each claimed tps needs 100,000 accounts and 100
/// terminals.
pub fn scaling_check(tps: f64, config: &ScaleConfig) -> ScalingVerdict {
    let tps = tps.max(0.0);
    let required = |per: u64| (tps * per as f64 - 1e-6).ceil().max(0.0) as u64;
    let required_accounts = required(ACCOUNTS_PER_TPS);
    let configured_accounts = config.account_count();
    ScalingVerdict {
        measured_tps: tps,
        required_accounts,
        required_terminals: required(TERMINALS_PER_TPS),
        configured_accounts,
        compliant: configured_accounts >= required_accounts,
    }
}

/// Fraction of latencies strictly under the 2 s response-time limit.
pub fn rt_check(latencies_us: &[u64]) -> Option<f64> {
    if latencies_us.is_empty() {
        return None;
    }
    let limit = RESPONSE_TIME_LIMIT.as_micros() as u64;
    let under = latencies_us.iter().filter(|&&l| l < limit).count();
    Some(under as f64 / latencies_us.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Totals {
    pub txns: u64,
    pub aborted: u64,
    pub failed: u64,
    pub elapsed_s: f64,
    pub cpu_s: f64,
    /// Log page writes plus data page writes.
    pub physical_io: u64,
    pub log_ios: u64,
    pub data_ios: u64,
    pub log_flushes: u64,
    pub log_bytes_appended: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CheckpointWindow {
    pub start_s: f64,
    pub end_s: f64,
    pub pages_written: usize,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub streams: usize,
    pub sample_period_s: f64,
    pub samples: Vec<Sample>,
    pub totals: Totals,
    pub percentiles: Option<Percentiles>,
    pub txns_per_flush: Option<f64>,
    pub bytes_per_txn: Option<f64>,
    pub cpu_us_per_txn: Option<f64>,
    pub scaling: ScalingVerdict,
    pub rt_check: Option<f64>,
    pub checkpoints: Vec<CheckpointWindow>,
    /// False when the engine failed before every stream finished.
    pub complete: bool,
    pub notes: Vec<String>,
}

impl RunReport {
    pub fn tps(&self) -> f64 {
        if self.totals.elapsed_s > 0.0 {
            self.totals.txns as f64 / self.totals.elapsed_s
        } else {
            0.0
        }
    }
}

/// Throughput seen around one checkpoint, from samples alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointImpact {
    /// Median tps of the samples just before the checkpoint started.
    pub baseline_tps: f64,
    /// Lowest tps among samples from the checkpoint start on, over baseline.
    pub min_ratio: f64,
    /// Indices of samples under half the baseline.
    pub blackout_samples: Vec<usize>,
    pub evaluated: usize,
}

/// Compares samples from the window containing `start_s` up to `until_s`
/// against the median of the `BASELINE_SAMPLES` windows that end by
/// `start_s`. `None` without enough history.
pub fn checkpoint_impact(samples: &[Sample], period_s: f64, start_s: f64, until_s: f64) -> Option<CheckpointImpact> {
    let before: Vec<f64> = samples
        .iter()
        .filter(|s| s.window_start_s + period_s <= start_s + 1e-9)
        .map(|s| s.tps)
        .collect();
    if before.len() < BASELINE_SAMPLES {
        return None;
    }
    let baseline = median(&before[before.len() - BASELINE_SAMPLES..]);
    if baseline <= 0.0 {
        return None;
    }
    let mut min_ratio = f64::INFINITY;
    let mut blackout = Vec::new();
    let mut evaluated = 0;
    for (i, s) in samples.iter().enumerate() {
        let end = s.window_start_s + period_s;
        if end <= start_s + 1e-9 || s.window_start_s >= until_s {
            continue;
        }
        evaluated += 1;
        let ratio = s.tps / baseline;
        min_ratio = min_ratio.min(ratio);
        if ratio < 0.5 {
            blackout.push(i);
        }
    }
    (evaluated > 0).then_some(CheckpointImpact {
        baseline_tps: baseline,
        min_ratio,
        blackout_samples: blackout,
        evaluated,
    })
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2],
        n => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_rule_figures() {
        let cfg = ScaleConfig::new(100);
        let v = scaling_check(8300.0, &cfg);
        assert_eq!((v.required_accounts, v.required_terminals), (830_000_000, 830_000));
        assert!(!v.compliant);
        let v = scaling_check(100.0, &cfg);
        assert_eq!((v.required_accounts, v.required_terminals), (10_000_000, 10_000));
        let v = scaling_check(0.0, &cfg);
        assert_eq!((v.required_accounts, v.required_terminals), (0, 0));
        assert!(v.compliant);
        assert!(scaling_check(10.0, &cfg).compliant);
    }

    #[test]
    fn rt_check_counts_strictly_under_two_seconds() {
        assert_eq!(rt_check(&[]), None);
        assert_eq!(rt_check(&[10, 1_999_999]), Some(1.0));
        assert_eq!(rt_check(&[10, 2_000_000]), Some(0.5));
    }

    fn samples(tps: &[f64]) -> Vec<Sample> {
        tps.iter()
            .enumerate()
            .map(|(i, &t)| Sample { window_start_s: i as f64, tps: t, ..Default::default() })
            .collect()
    }

    #[test]
    fn impact_uses_the_six_preceding_windows() {
        let s = samples(&[10.0, 100.0, 100.0, 90.0, 110.0, 100.0, 100.0, 40.0, 95.0]);
        let imp = checkpoint_impact(&s, 1.0, 7.0, 9.0).unwrap();
        assert_eq!(imp.baseline_tps, 100.0);
        assert_eq!(imp.blackout_samples, vec![7]);
        assert!((imp.min_ratio - 0.4).abs() < 1e-12);
        assert_eq!(imp.evaluated, 2);
        assert!(checkpoint_impact(&s, 1.0, 5.0, 9.0).is_none());
    }

    #[test]
    fn median_of_even_count_averages_the_middle() {
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(median(&[3.0]), 3.0);
    }
}
