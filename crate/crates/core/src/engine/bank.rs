use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::table::{Table, TableRank, ROWS_PER_PAGE};
use super::{EngineError, ScaleConfig};
use crate::money::Money;
use crate::wal::Lsn;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BranchRow {
    pub branch_id: u64,
    pub balance: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TellerRow {
    pub branch_id: u64,
    pub teller_id: u64,
    pub till: Money,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccountRow {
    pub branch_id: u64,
    pub account_id: u64,
    pub balance: Money,
}

/// One appended DebitCredit record. `timestamp_us` is microseconds since the
/// Unix epoch, taken when the row was appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub timestamp_us: i64,
    pub branch_id: u64,
    pub teller_id: u64,
    pub account_id: u64,
    pub amount: Money,
}

/// History row together with the lsn of the log record that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HistoryEntry {
    pub lsn: Lsn,
    pub row: HistoryRow,
}

/// Exact totals used for conservation checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub account_sum: Money,
    pub teller_sum: Money,
    pub branch_sum: Money,
    pub history_sum: Money,
    pub branch_count: u64,
    pub teller_count: u64,
    pub account_count: u64,
    pub history_count: u64,
}

impl Snapshot {
    /// The four balance sums are pairwise equal.
    pub fn is_conserved(&self) -> bool {
        self.account_sum == self.teller_sum
            && self.teller_sum == self.branch_sum
            && self.branch_sum == self.history_sum
    }
}

/// The Branch, Teller and Account tables plus the append-only History.
pub struct Bank {
    config: ScaleConfig,
    branches: Table,
    tellers: Table,
    accounts: Table,
    history: Mutex<Vec<HistoryEntry>>,
}

impl std::fmt::Debug for Bank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bank")
            .field("config", &self.config)
            .field("history_len", &self.history_len())
            .finish_non_exhaustive()
    }
}

impl Bank {
    /// Builds a fully populated bank with every balance at zero.
    pub fn create(config: ScaleConfig) -> Result<Bank, EngineError> {
        config.validate()?;
        Ok(Bank {
            config,
            branches: Table::new(config.branches as usize),
            tellers: Table::new(config.teller_count() as usize),
            accounts: Table::new(config.account_count() as usize),
            history: Mutex::new(Vec::new()),
        })
    }

    pub fn config(&self) -> &ScaleConfig {
        &self.config
    }

    pub(crate) fn table(&self, rank: TableRank) -> &Table {
        match rank {
            TableRank::Branch => &self.branches,
            TableRank::Teller => &self.tellers,
            TableRank::Account => &self.accounts,
            TableRank::History => panic!("history is not a balance table"),
        }
    }

    /// Dense row index of `id` in the given balance table, if the row exists.
    pub fn index_of(&self, rank: TableRank, id: u64) -> Option<usize> {
        let cfg = &self.config;
        match rank {
            TableRank::Branch => (id < cfg.branches as u64).then_some(id as usize),
            TableRank::Teller => dense_index(cfg, id, cfg.tellers_per_branch),
            TableRank::Account => dense_index(cfg, id, cfg.accounts_per_branch),
            TableRank::History => None,
        }
    }

    /// Inverse of [`Bank::index_of`].
    pub fn id_at(&self, rank: TableRank, idx: usize) -> u64 {
        let cfg = &self.config;
        let per = match rank {
            TableRank::Branch => return idx as u64,
            TableRank::Teller => cfg.tellers_per_branch,
            TableRank::Account => cfg.accounts_per_branch,
            TableRank::History => panic!("history rows have no key"),
        } as u64;
        let idx = idx as u64;
        (idx / per) * cfg.branch_radix + idx % per
    }

    pub fn branch(&self, branch_id: u64) -> Option<BranchRow> {
        let idx = self.index_of(TableRank::Branch, branch_id)?;
        Some(BranchRow { branch_id, balance: self.branches.read(idx) })
    }

    pub fn teller(&self, teller_id: u64) -> Option<TellerRow> {
        let idx = self.index_of(TableRank::Teller, teller_id)?;
        Some(TellerRow {
            branch_id: self.config.branch_of(teller_id),
            teller_id,
            till: self.tellers.read(idx),
        })
    }

    pub fn account(&self, account_id: u64) -> Option<AccountRow> {
        let idx = self.index_of(TableRank::Account, account_id)?;
        Some(AccountRow {
            branch_id: self.config.branch_of(account_id),
            account_id,
            balance: self.accounts.read(idx),
        })
    }

    pub fn branches(&self) -> impl Iterator<Item = BranchRow> + '_ {
        (0..self.branches.len()).map(move |i| BranchRow {
            branch_id: i as u64,
            balance: self.branches.read(i),
        })
    }

    pub fn tellers(&self) -> impl Iterator<Item = TellerRow> + '_ {
        (0..self.tellers.len()).map(move |i| {
            let teller_id = self.id_at(TableRank::Teller, i);
            TellerRow {
                branch_id: self.config.branch_of(teller_id),
                teller_id,
                till: self.tellers.read(i),
            }
        })
    }

    pub fn accounts(&self) -> impl Iterator<Item = AccountRow> + '_ {
        (0..self.accounts.len()).map(move |i| {
            let account_id = self.id_at(TableRank::Account, i);
            AccountRow {
                branch_id: self.config.branch_of(account_id),
                account_id,
                balance: self.accounts.read(i),
            }
        })
    }

    /// Balances of one table in key order.
    pub fn balances(&self, rank: TableRank) -> Vec<Money> {
        let t = self.table(rank);
        (0..t.len()).map(|i| t.read(i)).collect()
    }

    pub fn history(&self) -> Vec<HistoryRow> {
        self.history.lock().iter().map(|e| e.row).collect()
    }

    pub fn history_len(&self) -> usize {
        self.history.lock().len()
    }

    pub(crate) fn history_entries(&self, from: usize, to: usize) -> Vec<HistoryEntry> {
        let h = self.history.lock();
        let to = to.min(h.len());
        h[from.min(to)..to].to_vec()
    }

    pub(crate) fn push_history(&self, entry: HistoryEntry) {
        self.history.lock().push(entry);
    }

    pub(crate) fn extend_history(&self, entries: impl IntoIterator<Item = HistoryEntry>) {
        self.history.lock().extend(entries);
    }

    /// Applies a redo delta if the page has not already seen `lsn`.
    /// Returns whether the delta was applied.
    pub(crate) fn redo_delta(&self, rank: TableRank, idx: usize, delta: Money, lsn: Lsn) -> bool {
        let table = self.table(rank);
        if lsn <= table.page_lsn(idx / ROWS_PER_PAGE) {
            return false;
        }
        let mut row = table.lock(idx);
        *row += delta;
        table.note_update(idx, lsn);
        true
    }

    /// Overwrites the rows of one page with checkpoint contents.
    pub(crate) fn restore_page(&self, rank: TableRank, page: usize, rows: &[Money], lsn: Lsn) {
        let table = self.table(rank);
        let range = table.page_range(page);
        for (idx, value) in range.zip(rows) {
            *table.lock(idx) = *value;
        }
        table.set_page_lsn(page, lsn);
    }

    /// Exact totals. Only meaningful while no transaction is in flight.
    pub fn read_snapshot(&self) -> Snapshot {
        let history = self.history.lock();
        Snapshot {
            account_sum: self.accounts.sum(),
            teller_sum: self.tellers.sum(),
            branch_sum: self.branches.sum(),
            history_sum: history.iter().map(|e| e.row.amount).sum(),
            branch_count: self.branches.len() as u64,
            teller_count: self.tellers.len() as u64,
            account_count: self.accounts.len() as u64,
            history_count: history.len() as u64,
        }
    }
}

fn dense_index(cfg: &ScaleConfig, id: u64, per_branch: u32) -> Option<usize> {
    let branch = id / cfg.branch_radix;
    let seq = id % cfg.branch_radix;
    (branch < cfg.branches as u64 && seq < per_branch as u64)
        .then(|| (branch * per_branch as u64 + seq) as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_branch_teller_ids() {
        let bank = Bank::create(ScaleConfig::new(3)).unwrap();
        let ids: Vec<u64> = bank.tellers().map(|t| t.teller_id).collect();
        let mut want: Vec<u64> = (0..10).collect();
        want.extend(1_000_000..1_000_010);
        want.extend(2_000_000..2_000_010);
        assert_eq!(ids, want);
        for t in bank.tellers() {
            assert_eq!(t.teller_id / 1_000_000, t.branch_id);
            assert!(t.teller_id % 1_000_000 < 10);
        }
    }

    #[test]
    fn empty_bank_sums_zero() {
        let bank = Bank::create(ScaleConfig::new(0)).unwrap();
        let snap = bank.read_snapshot();
        assert_eq!(snap, Snapshot::default());
        assert!(snap.is_conserved());
    }

    #[test]
    fn row_counts_follow_ratios() {
        let bank = Bank::create(ScaleConfig::new(4)).unwrap();
        let snap = bank.read_snapshot();
        assert_eq!((snap.branch_count, snap.teller_count, snap.account_count), (4, 40, 40_000));
        assert!(bank.accounts().all(|a| a.balance == Money::ZERO));
        assert!(bank.accounts().all(|a| a.account_id / 1_000_000 == a.branch_id));
    }

    #[test]
    fn index_rejects_out_of_range_ids() {
        let bank = Bank::create(ScaleConfig::new(2)).unwrap();
        assert_eq!(bank.index_of(TableRank::Teller, 1_000_009), Some(19));
        assert_eq!(bank.index_of(TableRank::Teller, 1_000_010), None);
        assert_eq!(bank.index_of(TableRank::Account, 2_000_000), None);
        assert_eq!(bank.index_of(TableRank::Account, 10_000), None);
        assert_eq!(bank.id_at(TableRank::Account, 10_001), 1_000_001);
    }
}
