//! One PASS/FAIL line per acceptance criterion; exits nonzero on any FAIL.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use minibank::checkpoint::{measure_replay_rate, CheckpointMode, CheckpointPolicy, Scheduler};
use minibank::engine::{ScaleConfig, Snapshot, TableRank};
use minibank::harness::{
    crash_test, init_dir, run, CheckpointTrigger, Checkpointing, CrashSpec, DataSpec, LogSpec, Rig, RigSpec, RunPlan,
};
use minibank::metrics::{checkpoint_impact, scaling_check, RunReport};
use minibank::money::Money;
use minibank::wal::{recover, SimLogConfig, SimLogDevice};
use minibank::workload::{gen_draw, MixParams, RequestGenerator, WorkloadRng};

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    check: fn() -> Outcome,
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sim_rig(branches: u32, flush_us: u64) -> Result<Rig, String> {
    Rig::build(&RigSpec::sim(branches, Duration::from_micros(flush_us))).map_err(|e| e.to_string())
}

fn run_report(plan: &RunPlan, rig: &Rig) -> Result<RunReport, String> {
    run(plan, rig).map(|o| o.report).map_err(|e| e.to_string())
}

fn sums_match(s: &Snapshot) -> bool {
    s.account_sum == s.teller_sum && s.teller_sum == s.branch_sum && s.branch_sum == s.history_sum
}

fn population() -> Outcome {
    let mut lines = Vec::new();
    for branches in [1000u32, 100] {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let rig = init_dir(dir.path(), branches).map_err(|e| e.to_string())?;
        let bank = rig.engine.bank();
        let s = bank.read_snapshot();
        let b = branches as u64;
        let counts = (s.branch_count, s.teller_count, s.account_count, s.history_count);
        if counts != (b, 10 * b, 10_000 * b, 0) {
            return Err(format!("{branches} branches: counts {counts:?}"));
        }
        let iterated = (bank.branches().count(), bank.tellers().count(), bank.accounts().count());
        if iterated != (b as usize, 10 * b as usize, 10_000 * b as usize) {
            return Err(format!("{branches} branches: iterated {iterated:?}"));
        }
        let nonzero = TableRank::BALANCE_TABLES
            .iter()
            .map(|r| bank.balances(*r).into_iter().filter(|m| *m != Money::ZERO).count() as u64)
            .sum::<u64>();
        if nonzero > 0 {
            return Err(format!("{branches} branches: {nonzero} nonzero balances"));
        }
        lines.push(format!("{branches}: {}/{}/{}", s.branch_count, s.teller_count, s.account_count));
    }
    Ok(lines.join(", "))
}

fn conservation() -> Outcome {
    let seed = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let rig = sim_rig(10, 0)?;
    let mut plan = RunPlan::new(8, 12_500);
    plan.seed = seed;
    let report = run_report(&plan, &rig)?;
    let s = rig.engine.read_snapshot();
    ensure(
        report.totals.txns == 100_000 && s.history_count == 100_000 && sums_match(&s) && s.is_conserved(),
        format!("seed {seed}: {} txns, sum {} on every table", report.totals.txns, s.account_sum),
    )
}

fn equivalence() -> Outcome {
    let requests: Vec<_> = RequestGenerator::new(MixParams { rng_seed: 11, ..Default::default() }, 10, 0)
        .take(40_000)
        .collect();
    let serial = sim_rig(10, 0)?;
    let concurrent = sim_rig(10, 20)?;
    run_report(&RunPlan::fixed(1, requests.clone()), &serial)?;
    run_report(&RunPlan::fixed(8, requests), &concurrent)?;
    let (a, b) = (serial.engine.read_snapshot(), concurrent.engine.read_snapshot());
    let same_rows = TableRank::BALANCE_TABLES
        .iter()
        .all(|r| serial.engine.bank().balances(*r) == concurrent.engine.bank().balances(*r));
    ensure(a == b && same_rows, format!("40000 requests: sums {} / {}, rows equal: {same_rows}", a.account_sum, b.account_sum))
}

fn durability() -> Outcome {
    let v = crash_test(&RunPlan::new(4, 25), CrashSpec::TruncateLogAtRandomByte, 1000, &RigSpec::sim(2, Duration::ZERO))
        .map_err(|e| e.to_string())?;
    let failed: Vec<_> = v.failures().take(3).map(|t| format!("trial {}: {:?}", t.trial, t.transcript)).collect();
    let recovered: usize = v.trials.iter().map(|t| t.recovered).sum();
    ensure(
        v.trials.len() == 1000 && failed.is_empty(),
        format!("{} trials, {} failed, mean recovered {:.1}/100 {failed:?}", v.trials.len(), v.failures().count(), recovered as f64 / 1000.0),
    )
}

fn group_commit() -> Outcome {
    let one = run_report(&RunPlan::new(1, 1_500), &sim_rig(10, 1_000)?)?;
    let eight = run_report(&RunPlan::new(8, 1_500), &sim_rig(10, 1_000)?)?;
    let (t1, t8) = (one.txns_per_flush.unwrap_or(0.0), eight.txns_per_flush.unwrap_or(0.0));
    ensure(
        t1 == 1.0 && t8 > 1.5 && eight.tps() > 2.0 * one.tps(),
        format!("txns/flush {t1:.2} vs {t8:.2}, tps {:.0} vs {:.0}", one.tps(), eight.tps()),
    )
}

const BLACKOUT_PERIOD_S: f64 = 2.0;

/// The checkpoint's impact on tps from its start to its end.
fn impact(mode: CheckpointMode) -> Result<(f64, usize, String), String> {
    let spec = RigSpec {
        scale: ScaleConfig::new(400),
        log: LogSpec::Sim(SimLogConfig { flush_latency: Duration::from_micros(1_000), ..Default::default() }),
        data: DataSpec::Sim { write_latency: Duration::from_micros(200) },
        shared_spindle: true,
    };
    let rig = Rig::build(&spec).map_err(|e| e.to_string())?;
    let mut plan = RunPlan::new(8, u64::MAX / 16);
    plan.sample_period = Duration::from_secs_f64(BLACKOUT_PERIOD_S);
    // Spread paces its writes over half the interval; both runs outlast the checkpoint.
    let limit = match mode {
        CheckpointMode::Burst => 22,
        CheckpointMode::Spread => 76,
    };
    plan.time_limit = Some(Duration::from_secs(limit));
    plan.checkpointing = Checkpointing::On {
        policy: CheckpointPolicy::new(mode, Duration::from_secs(120)),
        trigger: CheckpointTrigger::At(Duration::from_secs(12)),
    };
    let report = run_report(&plan, &rig)?;
    let cp = report.checkpoints.first().ok_or("no checkpoint ran")?;
    if cp.failed {
        return Err(format!("{mode} checkpoint failed"));
    }
    let imp = checkpoint_impact(&report.samples, BLACKOUT_PERIOD_S, cp.start_s, cp.end_s)
        .ok_or("not enough samples before the checkpoint")?;
    let detail = format!(
        "{mode} {:.1}s..{:.1}s {} pages, baseline {:.0} tps, min {:.2}",
        cp.start_s, cp.end_s, cp.pages_written, imp.baseline_tps, imp.min_ratio
    );
    Ok((imp.min_ratio, imp.blackout_samples.len(), detail))
}

fn blackout() -> Outcome {
    let (_, burst_blackouts, burst) = impact(CheckpointMode::Burst)?;
    let (spread_min, _, spread) = impact(CheckpointMode::Spread)?;
    ensure(burst_blackouts >= 1 && spread_min >= 0.8, format!("{burst} ({burst_blackouts} blackout samples); {spread}"))
}

fn scaling() -> Outcome {
    let cfg = ScaleConfig::new(1000);
    let big = scaling_check(8300.0, &cfg);
    let small = scaling_check(100.0, &cfg);
    let got = (big.required_accounts, big.required_terminals, small.required_accounts, small.required_terminals);
    ensure(
        got == (830_000_000, 830_000, 10_000_000, 10_000) && small.compliant && !big.compliant,
        format!("8300 tps: {}/{}, 100 tps: {}/{}", got.0, got.1, got.2, got.3),
    )
}

fn response_time() -> Outcome {
    let report = run_report(&RunPlan::new(8, 1_000), &sim_rig(10, 1_000)?)?;
    let frac = report.rt_check.ok_or("no receipts")?;
    ensure(frac >= 0.9, format!("{:.4} of {} receipts under 2 s", frac, report.totals.txns))
}

fn locality() -> Outcome {
    let cfg = ScaleConfig::new(1000);
    let mix = MixParams::for_config(&cfg, 2024);
    let mut rng = WorkloadRng::for_stream(mix.rng_seed, 0);
    let n = 1_000_000u64;
    let local = (0..n)
        .filter(|_| {
            let q = gen_draw(&mut rng, &mix, cfg.branches).request;
            q.teller_id / cfg.branch_radix == q.account_id / cfg.branch_radix
        })
        .count() as f64;
    let p = 0.85 + 0.15 / 1000.0;
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let measured = local / n as f64;
    ensure((measured - p).abs() <= 4.0 * sigma, format!("local {measured:.5}, expected {p:.5} ± {:.5}", 4.0 * sigma))
}

fn recovery_bound() -> Outcome {
    let read_latency = Duration::from_micros(200);
    let rate = measure_replay_rate(SimLogConfig { read_latency, ..Default::default() }, 20_000);
    let interval = Duration::from_secs(5);
    let bound = 2.0 * interval.as_secs_f64() * rate;

    let rig = sim_rig(20, 1_000)?;
    let (sim_log, sim_data) = (rig.sim_log.clone().unwrap(), rig.sim_data.clone().unwrap());
    let policy = CheckpointPolicy { replay_rate: rate, ..CheckpointPolicy::new(CheckpointMode::Spread, interval) };
    let checkpointer = rig.checkpointer(policy).map_err(|e| e.to_string())?;
    // The log and the image as a crash just before each install would find them.
    let crash_points: Arc<Mutex<Vec<(Vec<u8>, Option<Vec<u8>>)>>> = Arc::default();
    {
        let points = crash_points.clone();
        let (log, data) = (sim_log.clone(), sim_data.clone());
        checkpointer.set_install_probe(move || points.lock().unwrap().push((log.contents(), data.image())));
    }
    let scheduler = Scheduler::spawn(checkpointer.clone());

    let done = AtomicBool::new(false);
    let worst_estimate = AtomicU64::new(0);
    let report = thread::scope(|s| {
        s.spawn(|| {
            while !done.load(Ordering::Acquire) {
                let pending = rig.engine.wal().last_lsn().saturating_sub(checkpointer.installed_begin());
                worst_estimate.fetch_max(pending, Ordering::Relaxed);
                thread::sleep(Duration::from_millis(20));
            }
        });
        let mut plan = RunPlan::new(8, u64::MAX / 16);
        plan.time_limit = Some(Duration::from_secs(45));
        let report = run_report(&plan, &rig);
        done.store(true, Ordering::Release);
        report
    })?;
    let errors = scheduler.stop();
    if !errors.is_empty() {
        return Err(format!("checkpoint errors: {errors:?}"));
    }
    let installs = checkpointer.events().iter().filter(|e| e.error.is_none()).count();
    let mut points = std::mem::take(&mut *crash_points.lock().unwrap());
    points.push((sim_log.contents(), sim_data.image()));

    let mut worst_replayed = 0;
    for (log, image) in &points {
        let dev = SimLogDevice::from_bytes(log.clone(), SimLogConfig::default());
        let out = recover(&dev, image.as_deref(), rig.config()).map_err(|e| e.to_string())?;
        if !out.bank.read_snapshot().is_conserved() {
            return Err("a crash point recovered an unconserved bank".into());
        }
        worst_replayed = worst_replayed.max(out.records_scanned);
    }
    let worst = worst_replayed.max(worst_estimate.load(Ordering::Relaxed));
    ensure(
        installs >= 2 && (worst as f64) <= bound,
        format!(
            "replay rate {rate:.0} rec/s, bound {bound:.0} records, worst replay {worst_replayed} at {} crash points, \
             worst pending {}, {installs} checkpoints over {} txns",
            points.len(),
            worst_estimate.load(Ordering::Relaxed),
            report.totals.txns
        ),
    )
}

fn throughput_floor() -> Outcome {
    let rig = sim_rig(10, 100)?;
    let mut plan = RunPlan::new(8, u64::MAX / 16);
    plan.time_limit = Some(Duration::from_secs(3));
    let report = run_report(&plan, &rig)?;
    ensure(
        report.tps() >= 10_000.0,
        format!("{:.0} tps, {:.1} txns/flush, {:.1} us cpu/txn", report.tps(), report.txns_per_flush.unwrap_or(0.0), report.cpu_us_per_txn.unwrap_or(0.0)),
    )
}

fn criteria() -> Vec<Criterion> {
    let s = Duration::from_secs;
    vec![
        Criterion { id: 1, name: "population exactness", budget: s(60), check: population },
        Criterion { id: 2, name: "conservation", budget: s(60), check: conservation },
        Criterion { id: 3, name: "serial/concurrent equivalence", budget: s(120), check: equivalence },
        Criterion { id: 4, name: "durability under truncation", budget: s(300), check: durability },
        Criterion { id: 5, name: "group commit emergence", budget: s(120), check: group_commit },
        Criterion { id: 6, name: "checkpoint blackout and spread fix", budget: s(180), check: blackout },
        Criterion { id: 7, name: "scaling verdict", budget: s(1), check: scaling },
        Criterion { id: 8, name: "response-time rule", budget: s(60), check: response_time },
        Criterion { id: 9, name: "locality statistics", budget: s(30), check: locality },
        Criterion { id: 10, name: "recovery bound", budget: s(180), check: recovery_bound },
        Criterion { id: 11, name: "throughput floor", budget: s(60), check: throughput_floor },
    ]
}

fn main() -> ExitCode {
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for c in criteria().into_iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let started = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = started.elapsed();
        let outcome = match outcome {
            Ok(d) if took > c.budget => Err(format!("{d}; took {took:.1?}, budget {:?}", c.budget)),
            other => other,
        };
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {}: {} ({:.1}s) {detail}", c.id, c.name, took.as_secs_f64());
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
