use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::percentile::Percentiles;

/// One sampling window. Field names are the CSV header.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Sample {
    pub window_start_s: f64,
    pub tps: f64,
    pub log_flushes_per_s: f64,
    pub log_bytes_per_s: f64,
    pub io_per_s: f64,
    pub cpu_frac: f64,
    pub p50_us: u64,
    pub p90_us: u64,
    pub p99_us: u64,
}

/// Monotone engine counters read at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CounterSnapshot {
    pub txns: u64,
    pub log_flushes: u64,
    pub log_bytes: u64,
    pub log_ios: u64,
    pub data_ios: u64,
    pub cpu: Duration,
}

pub trait CounterSource: Send + Sync {
    fn snapshot(&self) -> CounterSnapshot;
    /// Latencies (µs) of transactions acknowledged since the last call.
    fn drain_latencies(&self) -> Vec<u64>;
}

/// Turns counter deltas over one window into a `Sample`.
pub fn window_sample(
    window_start_s: f64,
    period: Duration,
    before: &CounterSnapshot,
    after: &CounterSnapshot,
    latencies: &[u64],
    cpus: usize,
) -> Sample {
    let secs = period.as_secs_f64();
    let rate = |a: u64, b: u64| a.saturating_sub(b) as f64 / secs;
    let cpu = after.cpu.saturating_sub(before.cpu).as_secs_f64() / (secs * cpus.max(1) as f64);
    let p = Percentiles::of(latencies).unwrap_or_default();
    Sample {
        window_start_s,
        tps: rate(after.txns, before.txns),
        log_flushes_per_s: rate(after.log_flushes, before.log_flushes),
        log_bytes_per_s: rate(after.log_bytes, before.log_bytes),
        io_per_s: rate(after.log_ios + after.data_ios, before.log_ios + before.data_ios),
        cpu_frac: cpu.clamp(0.0, 1.0),
        p50_us: p.p50_us,
        p90_us: p.p90_us,
        p99_us: p.p99_us,
    }
}

/// Periodic sampler thread. Windows are back to back and of fixed length;
/// a trailing partial window is not reported.
pub struct Sampler {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Vec<Sample>>>,
}

impl Sampler {
    pub fn start(source: Arc<dyn CounterSource>, period: Duration, origin: Instant) -> Sampler {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = thread::spawn(move || sample_loop(&*source, period, origin, &flag));
        Sampler { stop, handle: Some(handle) }
    }

    pub fn finish(mut self) -> Vec<Sample> {
        self.stop.store(true, Ordering::Release);
        match self.handle.take() {
            Some(h) => {
                h.thread().unpark();
                h.join().unwrap_or_default()
            }
            None => Vec::new(),
        }
    }
}

impl Drop for Sampler {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Release);
    }
}

/// Emits one sample per `period` from `origin` until `stop` is set.
pub fn sample_loop(
    source: &dyn CounterSource,
    period: Duration,
    origin: Instant,
    stop: &AtomicBool,
) -> Vec<Sample> {
    let cpus = thread::available_parallelism().map_or(1, |n| n.get());
    let mut samples = Vec::new();
    let mut prev = source.snapshot();
    source.drain_latencies();
    let mut k = 0u32;
    let step = period.min(Duration::from_millis(20));
    loop {
        let deadline = origin + period * (k + 1);
        while Instant::now() < deadline {
            if stop.load(Ordering::Acquire) {
                return samples;
            }
            thread::park_timeout(deadline.saturating_duration_since(Instant::now()).min(step));
        }
        let now = source.snapshot();
        let lat = source.drain_latencies();
        samples.push(window_sample((period * k).as_secs_f64(), period, &prev, &now, &lat, cpus));
        prev = now;
        k += 1;
    }
}

/// Process CPU time, user plus system.
pub fn process_cpu_time() -> Duration {
    let mut usage = std::mem::MaybeUninit::<libc::rusage>::zeroed();
    // SAFETY: getrusage only writes the struct it is handed.
    let rc = unsafe { libc::getrusage(libc::RUSAGE_SELF, usage.as_mut_ptr()) };
    if rc != 0 {
        return Duration::ZERO;
    }
    // SAFETY: initialized by the successful call above.
    let u = unsafe { usage.assume_init() };
    let tv = |t: libc::timeval| Duration::new(t.tv_sec as u64, t.tv_usec as u32 * 1000);
    tv(u.ru_utime) + tv(u.ru_stime)
}
