//! Run sampling, latency percentiles, benchmark rule checks and report
//! emission.

mod emit;
mod percentile;
mod report;
mod sample;
mod svg;

pub use emit::{emit_csv, emit_summary, parse_csv, sql_str, timing_line, write_csv, CSV_HEADER};
pub use percentile::{percentile, percentile_sorted, PercentileError, Percentiles};
pub use report::{
    checkpoint_impact, median, rt_check, scaling_check, CheckpointImpact, CheckpointWindow, RunReport,
    ScalingVerdict, Totals, ACCOUNTS_PER_TPS, BASELINE_SAMPLES, RESPONSE_TIME_LIMIT, TERMINALS_PER_TPS,
};
pub use sample::{process_cpu_time, sample_loop, window_sample, CounterSnapshot, CounterSource, Sample, Sampler};
pub use svg::render_svg;
