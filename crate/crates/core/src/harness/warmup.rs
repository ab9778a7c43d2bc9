use std::hint::black_box;
use std::time::{Duration, Instant};

use super::plan::Warmup;
use crate::engine::{Bank, TableRank};
use crate::money::Money;
use crate::workload::{gen_request, MixParams, WorkloadRng};

/// Random warm-up stops once this fraction of rows has been read.
pub const RANDOM_TARGET: f64 = 0.99;
/// ... or after this many draws per row, whichever comes first.
pub const RANDOM_DRAWS_PER_ROW: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupStats {
    pub mode: Warmup,
    pub elapsed: Duration,
    pub rows: u64,
    pub touched: u64,
    pub reads: u64,
}

impl WarmupStats {
    pub fn touched_fraction(&self) -> f64 {
        if self.rows == 0 {
            1.0
        } else {
            self.touched as f64 / self.rows as f64
        }
    }
}

/// Reads rows of the balance tables so later transactions find them hot.
pub fn warmup(bank: &Bank, mode: Warmup, seed: u64) -> WarmupStats {
    let started = Instant::now();
    let rows: u64 = TableRank::BALANCE_TABLES.iter().map(|r| bank.table(*r).len() as u64).sum();
    let (touched, reads) = match mode {
        Warmup::None => (0, 0),
        Warmup::SequentialScan => {
            let mut acc = Money::ZERO;
            for rank in TableRank::BALANCE_TABLES {
                let table = bank.table(rank);
                for idx in 0..table.len() {
                    acc += table.read(idx);
                }
            }
            black_box(acc);
            (rows, rows)
        }
        Warmup::Random => random(bank, rows, seed),
    };
    WarmupStats { mode, elapsed: started.elapsed(), rows, touched, reads }
}

fn random(bank: &Bank, rows: u64, seed: u64) -> (u64, u64) {
    let cfg = bank.config();
    let mix = MixParams::for_config(cfg, seed);
    let mut rng = WorkloadRng::for_stream(seed, u64::MAX);
    let mut seen: Vec<Vec<bool>> =
        TableRank::BALANCE_TABLES.iter().map(|r| vec![false; bank.table(*r).len()]).collect();
    let target = (rows as f64 * RANDOM_TARGET).ceil() as u64;
    let limit = rows.saturating_mul(RANDOM_DRAWS_PER_ROW);
    let (mut touched, mut reads, mut draws) = (0u64, 0u64, 0u64);
    let mut acc = Money::ZERO;
    while touched < target && draws < limit {
        let r = gen_request(&mut rng, &mix, cfg.branches);
        draws += 1;
        let keys = [
            (TableRank::Branch, cfg.branch_of(r.teller_id)),
            (TableRank::Teller, r.teller_id),
            (TableRank::Account, r.account_id),
        ];
        for (slot, (rank, id)) in keys.into_iter().enumerate() {
            let Some(idx) = bank.index_of(rank, id) else { continue };
            acc += bank.table(rank).read(idx);
            reads += 1;
            if !std::mem::replace(&mut seen[slot][idx], true) {
                touched += 1;
            }
        }
    }
    black_box(acc);
    (touched, reads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::ScaleConfig;

    #[test]
    fn sequential_touches_every_row_once() {
        let bank = Bank::create(ScaleConfig::new(3)).unwrap();
        let s = warmup(&bank, Warmup::SequentialScan, 0);
        assert_eq!((s.rows, s.touched, s.reads), (3 + 30 + 30_000, 30_033, 30_033));
    }

    #[test]
    fn random_reaches_the_target_and_costs_more_reads() {
        let bank = Bank::create(ScaleConfig::new(2)).unwrap();
        let s = warmup(&bank, Warmup::Random, 9);
        assert!(s.touched_fraction() >= RANDOM_TARGET, "{s:?}");
        assert!(s.reads > 3 * s.rows);
        assert_eq!(warmup(&bank, Warmup::None, 0).reads, 0);
    }
}
