use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

use super::plan::{CheckpointTrigger, Checkpointing, RunPlan, TxnReceipt};
use super::rig::Rig;
use super::warmup::{warmup, WarmupStats};
use super::HarnessError;
use crate::checkpoint::{CheckpointEvent, DataDevice, Scheduler};
use crate::disk::sleep_until;
use crate::engine::{Engine, TxnError};
use crate::metrics::{
    process_cpu_time, rt_check, scaling_check, CheckpointWindow, CounterSnapshot, CounterSource, Percentiles,
    RunReport, Sampler, Totals,
};
use crate::money::Money;
use crate::wal::{LogDevice, SimLogDevice};
use crate::workload::{
    decode_request, decode_response, encode_request, encode_response, MixParams, RequestGenerator, RequestMessage,
    ResponseMessage, TxnRequest, TxnStatus,
};

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// In acknowledgment order.
    pub receipts: Vec<TxnReceipt>,
    pub warmup: WarmupStats,
    pub checkpoints: Vec<CheckpointEvent>,
}

/// Power cut on the simulated log device during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Kill {
    AfterTxn(u64),
    AtTime(Duration),
}

#[derive(Default)]
struct Shared {
    acked: AtomicU64,
    latencies: Mutex<Vec<u64>>,
    stop: AtomicBool,
    failed: AtomicBool,
    killed_at: Mutex<Option<Duration>>,
}

struct RunCounters {
    engine: Arc<Engine>,
    log: Arc<dyn LogDevice>,
    data: Arc<dyn DataDevice>,
    shared: Arc<Shared>,
}

impl CounterSource for RunCounters {
    fn snapshot(&self) -> CounterSnapshot {
        let fs = self.engine.flush_stats();
        CounterSnapshot {
            txns: self.shared.acked.load(Ordering::Relaxed),
            log_flushes: fs.flush_count,
            log_bytes: fs.bytes_written,
            log_ios: self.log.page_writes(),
            data_ios: self.data.ios(),
            cpu: process_cpu_time(),
        }
    }

    fn drain_latencies(&self) -> Vec<u64> {
        std::mem::take(&mut *self.shared.latencies.lock())
    }
}

/// Runs `plan` against the rig's engine and assembles the report.
pub fn run(plan: &RunPlan, rig: &Rig) -> Result<RunOutcome, HarnessError> {
    run_with(plan, rig, None)
}

pub(crate) fn run_with(plan: &RunPlan, rig: &Rig, kill: Option<Kill>) -> Result<RunOutcome, HarnessError> {
    plan.validate().map_err(HarnessError::Plan)?;
    let kill_device = match kill {
        Some(_) => Some(rig.sim_log.clone().ok_or_else(|| {
            HarnessError::Plan("crash injection needs a simulated log device".into())
        })?),
        None => None,
    };
    let engine = rig.engine.clone();
    let cfg = *engine.config();
    let warm = warmup(engine.bank(), plan.warmup, plan.seed);
    let checkpointer = match &plan.checkpointing {
        Checkpointing::Off => None,
        Checkpointing::On { policy, trigger } => Some((rig.checkpointer(*policy)?, *trigger)),
    };
    let mix = MixParams { local_fraction: plan.local_fraction, ..MixParams::for_config(&cfg, plan.seed) };

    let shared = Arc::new(Shared::default());
    let counters = Arc::new(RunCounters {
        engine: engine.clone(),
        log: rig.log.clone(),
        data: rig.data.clone(),
        shared: shared.clone(),
    });
    let start = counters.snapshot();
    let flush_start = engine.flush_stats();
    let aborts_start = engine.aborts();
    let (tx, rx) = mpsc::channel::<TxnReceipt>();

    let origin = Instant::now();
    let sampler = Sampler::start(counters.clone(), plan.sample_period, origin);
    let scheduler = match &checkpointer {
        Some((c, CheckpointTrigger::Scheduled)) => Some(Scheduler::spawn(c.clone())),
        _ => None,
    };
    let done = AtomicBool::new(false);
    let mut notes = Vec::new();
    let mut elapsed = Duration::ZERO;

    thread::scope(|s| {
        let streams: Vec<_> = (0..plan.streams)
            .map(|i| {
                let tx = tx.clone();
                let (engine, shared, kill_device) = (&*engine, &*shared, kill_device.as_deref());
                s.spawn(move || {
                    sleep_until(origin + plan.stagger[i]);
                    let stream = Stream { index: i, plan, engine, shared, origin, kill, kill_device };
                    match &plan.fixed_requests {
                        Some(all) => stream.drive(all.iter().copied().skip(i).step_by(plan.streams), &tx),
                        None => stream.drive(
                            RequestGenerator::new(mix, cfg.branches, i as u64).take(plan.txns_per_stream as usize),
                            &tx,
                        ),
                    }
                })
            })
            .collect();
        let at_checkpoint = match &checkpointer {
            Some((c, CheckpointTrigger::At(t))) => {
                let (c, done, t) = (c.clone(), &done, *t);
                Some(s.spawn(move || {
                    wait_until(origin + t, done).then(|| c.run_checkpoint().err()).flatten()
                }))
            }
            _ => None,
        };
        if let (Some(Kill::AtTime(t)), Some(dev)) = (kill, kill_device.as_deref()) {
            let (done, shared) = (&done, &*shared);
            s.spawn(move || {
                if wait_until(origin + t, done) {
                    pull_plug(dev, shared, origin);
                }
            });
        }
        for h in streams {
            if h.join().is_err() {
                shared.failed.store(true, Ordering::Release);
                notes.push("a stream panicked".to_string());
            }
        }
        elapsed = origin.elapsed();
        done.store(true, Ordering::Release);
        if let Some(Ok(Some(e))) = at_checkpoint.map(|h| h.join()) {
            notes.push(format!("checkpoint failed: {e}"));
        }
    });
    drop(tx);
    let end = counters.snapshot();
    let samples = sampler.finish();
    if let Some(sched) = scheduler {
        for e in sched.stop() {
            notes.push(format!("scheduled checkpoint failed: {e}"));
        }
    }
    let receipts: Vec<TxnReceipt> = rx.into_iter().collect();
    if let Some(t) = *shared.killed_at.lock() {
        notes.push(format!("log device killed at {:.3}s", t.as_secs_f64()));
    }
    if let Some(limit) = plan.time_limit {
        if elapsed >= limit && (receipts.len() as u64) < plan.total_txns() {
            notes.push(format!("stopped at the {:.1}s time limit", limit.as_secs_f64()));
        }
    }

    let checkpoints: Vec<CheckpointEvent> = checkpointer
        .as_ref()
        .map(|(c, _)| c.events().into_iter().filter(|e| e.started >= origin).collect())
        .unwrap_or_default();

    let committed: Vec<u64> = receipts.iter().filter(|r| r.is_committed()).map(|r| r.latency_us).collect();
    let txns = committed.len() as u64;
    let flush = engine.flush_stats().since(&flush_start);
    let log_ios = end.log_ios - start.log_ios;
    let data_ios = end.data_ios - start.data_ios;
    let cpu_s = end.cpu.saturating_sub(start.cpu).as_secs_f64();
    let totals = Totals {
        txns,
        aborted: engine.aborts() - aborts_start,
        failed: receipts.iter().filter(|r| r.status == TxnStatus::Failed).count() as u64,
        elapsed_s: elapsed.as_secs_f64(),
        cpu_s,
        physical_io: log_ios + data_ios,
        log_ios,
        data_ios,
        log_flushes: flush.flush_count,
        log_bytes_appended: flush.appended_bytes,
    };
    let per_txn = |x: f64| (txns > 0).then(|| x / txns as f64);
    let tps = if totals.elapsed_s > 0.0 { txns as f64 / totals.elapsed_s } else { 0.0 };
    let report = RunReport {
        streams: plan.streams,
        sample_period_s: plan.sample_period.as_secs_f64(),
        samples,
        totals,
        percentiles: Percentiles::of(&committed),
        txns_per_flush: flush.txns_per_flush(),
        bytes_per_txn: per_txn(flush.appended_bytes as f64),
        cpu_us_per_txn: per_txn(cpu_s * 1e6),
        scaling: scaling_check(tps, &cfg),
        rt_check: rt_check(&committed),
        checkpoints: checkpoints
            .iter()
            .map(|e| CheckpointWindow {
                start_s: (e.started - origin).as_secs_f64(),
                end_s: e.finished.saturating_duration_since(origin).as_secs_f64(),
                pages_written: e.pages_written,
                failed: e.error.is_some(),
            })
            .collect(),
        complete: !shared.failed.load(Ordering::Acquire),
        notes,
    };
    Ok(RunOutcome { report, receipts, warmup: warm, checkpoints })
}

/// Sleeps until `deadline`; false if `done` was set first.
fn wait_until(deadline: Instant, done: &AtomicBool) -> bool {
    loop {
        if done.load(Ordering::Acquire) {
            return false;
        }
        let now = Instant::now();
        if now >= deadline {
            return true;
        }
        thread::sleep((deadline - now).min(Duration::from_millis(5)));
    }
}

fn pull_plug(dev: &SimLogDevice, shared: &Shared, origin: Instant) {
    let mut at = shared.killed_at.lock();
    if at.is_none() {
        dev.crash();
        *at = Some(origin.elapsed());
    }
    shared.stop.store(true, Ordering::Release);
}

struct Stream<'a> {
    index: usize,
    plan: &'a RunPlan,
    engine: &'a Engine,
    shared: &'a Shared,
    origin: Instant,
    kill: Option<Kill>,
    kill_device: Option<&'a SimLogDevice>,
}

impl Stream<'_> {
    fn drive(&self, requests: impl Iterator<Item = TxnRequest>, tx: &mpsc::Sender<TxnReceipt>) {
        for (seq, request) in requests.enumerate() {
            if self.shared.stop.load(Ordering::Acquire) {
                break;
            }
            if self.plan.time_limit.is_some_and(|l| self.origin.elapsed() >= l) {
                break;
            }
            let client_tag = (self.index as u64) << 40 | seq as u64;
            let submitted = Instant::now();
            let (status, new_balance, commit_lsn) = if self.plan.messages {
                self.via_messages(request, client_tag)
            } else {
                self.execute(request)
            };
            let latency_us = submitted.elapsed().as_micros() as u64;
            let receipt = TxnReceipt {
                stream: self.index,
                client_tag,
                request,
                status,
                new_balance,
                commit_lsn,
                latency_us,
                submitted_us: (submitted - self.origin).as_micros() as u64,
            };
            if status == TxnStatus::Committed {
                self.shared.latencies.lock().push(latency_us);
                let n = self.shared.acked.fetch_add(1, Ordering::AcqRel) + 1;
                if let (Some(Kill::AfterTxn(k)), Some(dev)) = (self.kill, self.kill_device) {
                    if n >= k {
                        pull_plug(dev, self.shared, self.origin);
                    }
                }
            }
            let _ = tx.send(receipt);
            if status == TxnStatus::Failed {
                self.shared.failed.store(true, Ordering::Release);
                self.shared.stop.store(true, Ordering::Release);
                break;
            }
        }
    }

    fn execute(&self, r: TxnRequest) -> (TxnStatus, Money, u64) {
        match self.engine.debit_credit(r.teller_id, r.account_id, r.amount) {
            Ok(c) => (TxnStatus::Committed, c.new_balance, c.commit_lsn),
            Err(e) if e.is_abort() => (TxnStatus::Aborted, Money::ZERO, 0),
            Err(TxnError::NotDurable { commit_lsn, .. }) => (TxnStatus::Failed, Money::ZERO, commit_lsn),
            Err(_) => (TxnStatus::Failed, Money::ZERO, 0),
        }
    }

    /// The terminal's request and the engine's reply both cross as 100-byte
    /// messages.
    fn via_messages(&self, request: TxnRequest, client_tag: u64) -> (TxnStatus, Money, u64) {
        let wire = encode_request(&RequestMessage { request, client_tag });
        let Ok(msg) = decode_request(&wire) else {
            return (TxnStatus::Failed, Money::ZERO, 0);
        };
        let (status, new_balance, commit_lsn) = self.execute(msg.request);
        let wire = encode_response(&ResponseMessage { status, new_balance, commit_lsn, client_tag: msg.client_tag });
        match decode_response(&wire) {
            Ok(r) if r.client_tag == client_tag => (r.status, r.new_balance, r.commit_lsn),
            _ => (TxnStatus::Failed, Money::ZERO, commit_lsn),
        }
    }
}
