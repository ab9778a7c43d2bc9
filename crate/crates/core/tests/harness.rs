use std::time::Duration;

use minibank::engine::{Bank, TableRank};
use minibank::harness::{
    crash_test, reference_stagger, run, warmup, CrashSpec, Rig, RigSpec, RunPlan, TxnReceipt, Warmup,
};
use minibank::money::Money;
use minibank::workload::{MixParams, RequestGenerator, TxnStatus};

fn sim_rig(branches: u32, flush_us: u64) -> Rig {
    Rig::build(&RigSpec::sim(branches, Duration::from_micros(flush_us))).unwrap()
}

fn balances(bank: &Bank) -> Vec<Vec<Money>> {
    TableRank::BALANCE_TABLES.iter().map(|r| bank.balances(*r)).collect()
}

#[test]
fn zero_transactions_give_an_empty_report() {
    let rig = sim_rig(1, 0);
    let before = rig.log.len_bytes().unwrap();
    let out = run(&RunPlan::new(1, 0), &rig).unwrap();
    assert!(out.receipts.is_empty());
    assert_eq!(out.report.totals.txns, 0);
    assert_eq!(out.report.tps(), 0.0);
    assert_eq!(out.report.percentiles, None);
    assert_eq!(rig.log.len_bytes().unwrap(), before);
    assert!(out.report.complete);
}

#[test]
fn receipts_are_complete_and_ordered() {
    let rig = sim_rig(4, 50);
    let mut plan = RunPlan::new(4, 500);
    plan.seed = 3;
    let out = run(&plan, &rig).unwrap();
    assert_eq!(out.receipts.len(), 2_000);
    assert!(out.receipts.iter().all(TxnReceipt::is_committed));
    assert_eq!(out.report.totals.txns, 2_000);
    assert!(rig.engine.read_snapshot().is_conserved());

    let mut per_stream = vec![0u64; 4];
    for r in &out.receipts {
        assert!(r.commit_lsn > per_stream[r.stream], "{r:?}");
        per_stream[r.stream] = r.commit_lsn;
    }
    // An acknowledgment that precedes another submit precedes it in the log.
    let mut by_ack: Vec<_> = out.receipts.clone();
    by_ack.sort_by_key(|r| r.acknowledged_us());
    let mut by_submit = by_ack.clone();
    by_submit.sort_by_key(|r| r.submitted_us);
    let mut max_lsn = 0;
    let mut i = 0;
    for b in &by_submit {
        while i < by_ack.len() && by_ack[i].acknowledged_us() < b.submitted_us {
            max_lsn = max_lsn.max(by_ack[i].commit_lsn);
            i += 1;
        }
        assert!(b.commit_lsn > max_lsn, "{b:?} committed before lsn {max_lsn}");
    }

    let p = out.report.percentiles.unwrap();
    assert!(p.p50_us <= p.p90_us && p.p90_us <= p.p99_us);
    assert_eq!(out.report.rt_check, Some(1.0));
}

#[test]
fn receipts_report_the_new_account_balance() {
    let rig = sim_rig(1, 0);
    let out = run(&RunPlan::new(1, 300), &rig).unwrap();
    let mut expect = std::collections::HashMap::new();
    for r in &out.receipts {
        let bal = expect.entry(r.request.account_id).or_insert(Money::ZERO);
        *bal += r.request.amount;
        assert_eq!(r.new_balance, *bal);
    }
}

#[test]
fn streams_launch_on_their_stagger() {
    let rig = sim_rig(2, 0);
    let mut plan = RunPlan::staggered(3, 200, 0.0005);
    assert_eq!(plan.stagger[1], Duration::from_millis(180));
    plan.time_limit = Some(Duration::from_secs(30));
    let out = run(&plan, &rig).unwrap();
    for (i, delay) in reference_stagger(3, 0.0005).iter().enumerate() {
        let first = out.receipts.iter().filter(|r| r.stream == i).map(|r| r.submitted_us).min().unwrap();
        assert!(first >= delay.as_micros() as u64, "stream {i} started at {first} us");
        assert!(first < delay.as_micros() as u64 + 50_000, "stream {i} started at {first} us");
    }
}

#[test]
fn group_commit_lifts_throughput() {
    let one = run(&RunPlan::new(1, 200), &sim_rig(10, 1_000)).unwrap().report;
    let eight = run(&RunPlan::new(8, 200), &sim_rig(10, 1_000)).unwrap().report;
    assert!((one.txns_per_flush.unwrap() - 1.0).abs() < 1e-9, "{:?}", one.txns_per_flush);
    assert!(eight.txns_per_flush.unwrap() > 1.5, "{:?}", eight.txns_per_flush);
    assert!(eight.tps() > one.tps(), "{} vs {}", eight.tps(), one.tps());
}

#[test]
fn message_mode_changes_nothing_but_cost() {
    let plain = sim_rig(2, 0);
    let framed = sim_rig(2, 0);
    let mut plan = RunPlan::new(1, 1_000);
    plan.seed = 8;
    let a = run(&plan, &plain).unwrap();
    plan.messages = true;
    let b = run(&plan, &framed).unwrap();
    assert_eq!(balances(plain.engine.bank()), balances(framed.engine.bank()));
    let strip = |r: &TxnReceipt| (r.client_tag, r.request, r.status, r.new_balance, r.commit_lsn);
    assert_eq!(a.receipts.iter().map(strip).collect::<Vec<_>>(), b.receipts.iter().map(strip).collect::<Vec<_>>());
}

#[test]
fn serial_and_concurrent_runs_agree() {
    let requests: Vec<_> = RequestGenerator::new(MixParams { rng_seed: 4, ..Default::default() }, 3, 0)
        .take(4_000)
        .collect();
    let serial = sim_rig(3, 0);
    let concurrent = sim_rig(3, 20);
    run(&RunPlan::fixed(1, requests.clone()), &serial).unwrap();
    let out = run(&RunPlan::fixed(8, requests), &concurrent).unwrap();
    assert_eq!(out.receipts.len(), 4_000);
    assert_eq!(balances(serial.engine.bank()), balances(concurrent.engine.bank()));
    assert_eq!(serial.engine.read_snapshot(), concurrent.engine.read_snapshot());
}

#[test]
fn sample_totals_match_run_totals() {
    let rig = sim_rig(2, 100);
    let mut plan = RunPlan::new(2, u64::MAX / 4);
    plan.sample_period = Duration::from_millis(50);
    plan.time_limit = Some(Duration::from_millis(600));
    let out = run(&plan, &rig).unwrap();
    let r = &out.report;
    assert!(r.samples.len() >= 10, "{}", r.samples.len());
    let sampled: f64 = r.samples.iter().map(|s| s.tps * r.sample_period_s).sum();
    let window = r.samples.iter().map(|s| s.tps * r.sample_period_s).fold(0.0, f64::max);
    assert!((r.totals.txns as f64 - sampled).abs() <= window + 1.0, "{} vs {sampled}", r.totals.txns);
    for s in &r.samples {
        assert!(s.p50_us <= s.p90_us && s.p90_us <= s.p99_us);
        assert!((0.0..=1.0).contains(&s.cpu_frac));
    }
    assert!(r.notes.iter().any(|n| n.contains("time limit")));
}

#[test]
fn sequential_warmup_beats_random() {
    let bank = Bank::create(minibank::engine::ScaleConfig::new(20)).unwrap();
    let seq = warmup(&bank, Warmup::SequentialScan, 1);
    let rand = warmup(&bank, Warmup::Random, 1);
    assert_eq!(seq.touched, seq.rows);
    assert!(rand.touched_fraction() >= 0.99);
    assert!(seq.elapsed < rand.elapsed, "{:?} vs {:?}", seq.elapsed, rand.elapsed);
}

#[test]
fn truncating_at_byte_zero_keeps_nothing() {
    let v = crash_test(&RunPlan::new(2, 50), CrashSpec::TruncateLogAtByte(0), 3, &RigSpec::sim(1, Duration::ZERO))
        .unwrap();
    assert!(v.passed(), "{:?}", v.failures().collect::<Vec<_>>());
    assert!(v.trials.iter().all(|t| t.recovered == 0 && t.acknowledged == 100));
}

#[test]
fn random_truncations_recover_the_committed_prefix() {
    let v = crash_test(&RunPlan::new(3, 40), CrashSpec::TruncateLogAtRandomByte, 200, &RigSpec::sim(2, Duration::ZERO))
        .unwrap();
    assert!(v.passed(), "{:?}", v.failures().next());
    let cuts: std::collections::BTreeSet<_> = v.trials.iter().map(|t| t.surviving_bytes).collect();
    assert!(cuts.len() > 150);
}

#[test]
fn killed_runs_keep_every_acknowledged_commit() {
    let spec = RigSpec::sim(2, Duration::from_micros(200));
    let v = crash_test(&RunPlan::new(4, 200), CrashSpec::KillAfterTxn(150), 10, &spec).unwrap();
    assert!(v.passed(), "{:?}", v.failures().next());
    for t in &v.trials {
        assert!(t.recovered >= 150 && t.recovered <= t.submitted, "{t:?}");
        assert!(t.submitted < 800);
    }
    let v = crash_test(&RunPlan::new(4, 100_000), CrashSpec::KillAtTime(Duration::from_millis(30)), 5, &spec).unwrap();
    assert!(v.passed(), "{:?}", v.failures().next());
    assert!(v.trials.iter().all(|t| t.acknowledged > 0));
}

#[test]
fn failed_log_marks_the_run_incomplete() {
    let rig = sim_rig(1, 0);
    rig.sim_log.as_ref().unwrap().fail_after_writes(3);
    let out = run(&RunPlan::new(2, 1_000), &rig).unwrap();
    assert!(!out.report.complete);
    assert!(out.receipts.iter().any(|r| r.status == TxnStatus::Failed));
    assert!(out.report.totals.txns < 2_000);
}
