use std::sync::Arc;

use minibank::engine::{Bank, Engine, ScaleConfig};
use minibank::money::Money;
use minibank::wal::{recover, ScanStop, SimLogConfig, SimLogDevice, Wal, WalConfig};
use proptest::prelude::*;

const PAGE: usize = 512;
const HEADER: usize = 18;
// teller, account, history, branch, commit
const RECORDS: [usize; 5] = [40, 40, 64, 40, 23];

/// Byte offset just past each transaction's commit record, from the frozen
/// layout alone.
fn commit_ends(txns: usize) -> Vec<usize> {
    let (mut page, mut used) = (0usize, 0usize);
    let mut ends = Vec::new();
    for _ in 0..txns {
        for len in RECORDS {
            if used + len > PAGE - HEADER {
                page += 1;
                used = 0;
            }
            used += len;
        }
        ends.push(page * PAGE + HEADER + used);
    }
    ends
}

struct Run {
    log: Vec<u8>,
    requests: Vec<(u64, u64, Money)>,
}

fn run(txns: usize) -> Run {
    let dev = Arc::new(SimLogDevice::new(SimLogConfig::default()));
    let wal = Wal::create(dev.clone(), WalConfig::default()).unwrap();
    let engine = Engine::new(Bank::create(ScaleConfig::new(2)).unwrap(), wal);
    let mut requests = Vec::new();
    for i in 0..txns as u64 {
        let teller = (i % 2) * 1_000_000 + i % 10;
        let account = ((i * 7) % 2) * 1_000_000 + (i * 131) % 10_000;
        let amount = Money::from_micros(i as i64 * 1_000 - 37_000);
        engine.debit_credit(teller, account, amount).unwrap();
        requests.push((teller, account, amount));
    }
    Run { log: dev.contents(), requests }
}

fn expected_sums(reqs: &[(u64, u64, Money)]) -> Money {
    reqs.iter().map(|r| r.2).sum()
}

#[test]
fn empty_log_recovers_empty_bank() {
    let dev = SimLogDevice::new(SimLogConfig::default());
    let out = recover(&dev, None, &ScaleConfig::new(2)).unwrap();
    assert_eq!(out.stop, ScanStop::EndOfLog);
    assert_eq!(out.last_lsn, 0);
    assert_eq!(out.bank.read_snapshot(), Bank::create(ScaleConfig::new(2)).unwrap().read_snapshot());
}

#[test]
fn truncation_mid_fourth_txn_keeps_first_three() {
    let r = run(4);
    let ends = commit_ends(4);
    assert_eq!(r.log.len(), PAGE * 2);
    let cut = ends[2] + 50;
    let dev = SimLogDevice::from_bytes(r.log[..cut].to_vec(), SimLogConfig::default());
    let out = recover(&dev, None, &ScaleConfig::new(2)).unwrap();
    assert_eq!(out.committed.len(), 3);
    let snap = out.bank.read_snapshot();
    let mut account_7 = Money::ZERO;
    let mut branch = [Money::ZERO; 2];
    for &(t, a, amt) in &r.requests[..3] {
        branch[(t / 1_000_000) as usize] += amt;
        if a == r.requests[0].1 {
            account_7 += amt;
        }
    }
    assert_eq!(snap.history_sum, expected_sums(&r.requests[..3]));
    assert!(snap.is_conserved());
    assert_eq!(out.bank.branch(0).unwrap().balance, branch[0]);
    assert_eq!(out.bank.branch(1).unwrap().balance, branch[1]);
    assert_eq!(out.bank.account(r.requests[0].1).unwrap().balance, account_7);
}

#[test]
fn every_byte_offset_recovers_the_surviving_commit_prefix() {
    let r = run(100);
    let ends = commit_ends(100);
    assert_eq!(r.log.len(), (ends[99] / PAGE + 1) * PAGE);
    let cfg = ScaleConfig::new(2);
    for cut in 0..=r.log.len() {
        let dev = SimLogDevice::from_bytes(r.log[..cut].to_vec(), SimLogConfig::default());
        let out = recover(&dev, None, &cfg).unwrap();
        let survivors = ends.iter().filter(|&&e| e <= cut).count();
        assert_eq!(out.committed.len(), survivors, "cut {cut}");
        let snap = out.bank.read_snapshot();
        assert!(snap.is_conserved(), "cut {cut}");
        assert_eq!(snap.history_count, survivors as u64, "cut {cut}");
        assert_eq!(snap.account_sum, expected_sums(&r.requests[..survivors]), "cut {cut}");
    }
}

#[test]
fn recovered_log_can_be_resumed_and_recovered_again() {
    let r = run(30);
    let ends = commit_ends(30);
    let cut = ends[19] + 3;
    let dev = Arc::new(SimLogDevice::from_bytes(r.log[..cut].to_vec(), SimLogConfig::default()));
    let cfg = ScaleConfig::new(2);
    let out = recover(&*dev, None, &cfg).unwrap();
    assert_eq!(out.committed.len(), 20);
    let wal = Wal::resume(dev.clone(), out.tail, WalConfig::default()).unwrap();
    let engine = Engine::with_next_txn(out.bank, wal, out.next_txn_id);
    let c = engine.debit_credit(1, 5, Money::from_dollars(2)).unwrap();
    assert_eq!(c.commit_lsn, 20 * 5 + 5);
    let again = recover(&*dev, None, &cfg).unwrap();
    assert_eq!(again.committed.len(), 21);
    assert_eq!(again.stop, ScanStop::EndOfLog);
    assert_eq!(
        again.bank.read_snapshot().history_sum,
        expected_sums(&r.requests[..20]) + Money::from_dollars(2)
    );
}

#[test]
fn corrupt_first_page_without_image_is_unrecoverable() {
    let mut log = run(3).log;
    log[0] ^= 0xff;
    let dev = SimLogDevice::from_bytes(log, SimLogConfig::default());
    assert!(recover(&dev, None, &ScaleConfig::new(2)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flipped_byte_never_yields_phantoms(pos in 0usize..4096, bit in 0u8..8) {
        let r = run(40);
        let mut log = r.log.clone();
        let pos = pos % log.len();
        log[pos] ^= 1 << bit;
        let dev = SimLogDevice::from_bytes(log, SimLogConfig::default());
        if let Ok(out) = recover(&dev, None, &ScaleConfig::new(2)) {
            let n = out.committed.len();
            let snap = out.bank.read_snapshot();
            prop_assert!(snap.is_conserved());
            prop_assert_eq!(snap.account_sum, expected_sums(&r.requests[..n]));
        }
    }
}

