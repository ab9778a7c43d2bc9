use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PercentileError {
    #[error("no samples")]
    Empty,
    #[error("quantile {0} outside (0, 1]")]
    BadQuantile(String),
}

/// Nearest-rank percentile: the ceil(q * n)-th smallest value.
pub fn percentile(values: &[u64], q: f64) -> Result<u64, PercentileError> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    percentile_sorted(&sorted, q)
}

pub fn percentile_sorted(sorted: &[u64], q: f64) -> Result<u64, PercentileError> {
    if !(q > 0.0 && q <= 1.0) {
        return Err(PercentileError::BadQuantile(q.to_string()));
    }
    if sorted.is_empty() {
        return Err(PercentileError::Empty);
    }
    let n = sorted.len();
    // 0.9 * 10 is 9.000000000000002 in binary; don't let that round up a rank.
    let rank = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    Ok(sorted[rank.min(n) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50_us: u64,
    pub p90_us: u64,
    pub p99_us: u64,
}

impl Percentiles {
    /// `None` for an empty set.
    pub fn of(values: &[u64]) -> Option<Percentiles> {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        Self::of_sorted(&sorted)
    }

    pub fn of_sorted(sorted: &[u64]) -> Option<Percentiles> {
        Some(Percentiles {
            p50_us: percentile_sorted(sorted, 0.5).ok()?,
            p90_us: percentile_sorted(sorted, 0.9).ok()?,
            p99_us: percentile_sorted(sorted, 0.99).ok()?,
        })
    }
}
