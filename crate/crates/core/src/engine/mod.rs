//! Branch/Teller/Account/History tables and the DebitCredit transaction.
//!
//! Concurrency control is strict two-phase locking with every lock taken up
//! front in one global order: branch row, then teller row, then account row.
//! A transaction touches exactly one row of each table, so no wait-for cycle
//! can form. Locks are held across logging and applying the update and are
//! released once the commit record is in the log buffer; the caller is
//! acknowledged only after the log force covering that commit returns.

mod bank;
mod config;
mod table;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::{RwLock, RwLockWriteGuard};
use thiserror::Error;

pub use bank::{AccountRow, Bank, BranchRow, HistoryEntry, HistoryRow, Snapshot, TellerRow};
pub use config::{ScaleConfig, ACCOUNTS_PER_BRANCH, BRANCH_RADIX, TELLERS_PER_BRANCH};
pub use table::{DirtyMap, TableRank, ROWS_PER_PAGE};

use crate::money::Money;
use crate::wal::{FlushStats, Lsn, RecordBody, Wal, WalError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("branch radix {radix} must exceed rows per branch {per_branch}")]
    RadixTooSmall { radix: u64, per_branch: u32 },
    #[error("{0} branches overflow the id space")]
    TooManyBranches(u32),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TxnError {
    #[error("unknown teller {0}")]
    UnknownTeller(u64),
    #[error("unknown account {0}")]
    UnknownAccount(u64),
    /// Nothing was logged or applied.
    #[error("transaction not logged: {0}")]
    Log(WalError),
    /// Logged and applied in memory, but the covering force failed. The
    /// transaction may or may not survive a crash.
    #[error("commit {commit_lsn} not durable: {source}")]
    NotDurable { commit_lsn: Lsn, source: WalError },
}

impl TxnError {
    pub fn is_abort(&self) -> bool {
        matches!(self, TxnError::UnknownTeller(_) | TxnError::UnknownAccount(_))
    }
}

/// Outcome of an acknowledged DebitCredit transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Committed {
    pub txn_id: u64,
    pub new_balance: Money,
    pub commit_lsn: Lsn,
}

/// A bank bound to its log.
pub struct Engine {
    bank: Arc<Bank>,
    wal: Wal,
    /// Held shared by transactions between logging and applying, and
    /// exclusively while a checkpoint logs its begin record.
    apply_gate: RwLock<()>,
    next_txn_id: AtomicU64,
    aborts: AtomicU64,
}

impl Engine {
    pub fn new(bank: Bank, wal: Wal) -> Engine {
        Self::with_next_txn(bank, wal, 1)
    }

    /// Engine over a recovered bank; txn ids continue from `next_txn_id`.
    pub fn with_next_txn(bank: Bank, wal: Wal, next_txn_id: u64) -> Engine {
        Engine {
            bank: Arc::new(bank),
            wal,
            apply_gate: RwLock::new(()),
            next_txn_id: AtomicU64::new(next_txn_id.max(1)),
            aborts: AtomicU64::new(0),
        }
    }

    pub fn bank(&self) -> &Arc<Bank> {
        &self.bank
    }

    pub fn wal(&self) -> &Wal {
        &self.wal
    }

    pub fn config(&self) -> &ScaleConfig {
        self.bank.config()
    }

    /// One DebitCredit: add `amount` to the teller's till, the account's
    /// balance and the teller's branch, append a history row, commit durably.
    /// Returns the account's new balance.
    pub fn debit_credit(
        &self,
        teller_id: u64,
        account_id: u64,
        amount: Money,
    ) -> Result<Committed, TxnError> {
        let bank = &*self.bank;
        let cfg = bank.config();
        let Some(teller_idx) = bank.index_of(TableRank::Teller, teller_id) else {
            self.aborts.fetch_add(1, Ordering::Relaxed);
            return Err(TxnError::UnknownTeller(teller_id));
        };
        let Some(account_idx) = bank.index_of(TableRank::Account, account_id) else {
            self.aborts.fetch_add(1, Ordering::Relaxed);
            return Err(TxnError::UnknownAccount(account_id));
        };
        // The home branch comes from the teller, not the account.
        let branch_id = cfg.branch_of(teller_id);
        let branch_idx = branch_id as usize;

        let branches = bank.table(TableRank::Branch);
        let tellers = bank.table(TableRank::Teller);
        let accounts = bank.table(TableRank::Account);

        let gate = self.apply_gate.read();
        let mut branch = branches.lock(branch_idx);
        let mut teller = tellers.lock(teller_idx);
        let mut account = accounts.lock(account_idx);

        let txn_id = self.allocate_txn_id();
        let row = HistoryRow {
            timestamp_us: now_micros(),
            branch_id,
            teller_id,
            account_id,
            amount,
        };
        let first = self
            .wal
            .append_batch(
                txn_id,
                &[
                    RecordBody::Update { table: TableRank::Teller, key: teller_id, delta: amount },
                    RecordBody::Update {
                        table: TableRank::Account,
                        key: account_id,
                        delta: amount,
                    },
                    RecordBody::History(row),
                    RecordBody::Update { table: TableRank::Branch, key: branch_id, delta: amount },
                    RecordBody::Commit,
                ],
            )
            .map_err(TxnError::Log)?;

        *teller += amount;
        tellers.note_update(teller_idx, first);
        *account += amount;
        accounts.note_update(account_idx, first + 1);
        let new_balance = *account;
        bank.push_history(HistoryEntry { lsn: first + 2, row });
        *branch += amount;
        branches.note_update(branch_idx, first + 3);
        let commit_lsn = first + 4;

        drop(account);
        drop(teller);
        drop(branch);
        drop(gate);

        self.wal
            .force_to(commit_lsn)
            .map_err(|source| TxnError::NotDurable { commit_lsn, source })?;
        Ok(Committed { txn_id, new_balance, commit_lsn })
    }

    pub fn read_snapshot(&self) -> Snapshot {
        self.bank.read_snapshot()
    }

    pub fn flush_stats(&self) -> FlushStats {
        self.wal.flush_stats()
    }

    pub fn aborts(&self) -> u64 {
        self.aborts.load(Ordering::Relaxed)
    }

    pub(crate) fn allocate_txn_id(&self) -> u64 {
        self.next_txn_id.fetch_add(1, Ordering::Relaxed)
    }

    pub fn next_txn_id(&self) -> u64 {
        self.next_txn_id.load(Ordering::Relaxed)
    }

    /// Blocks new transactions from logging until the guard drops, after
    /// every transaction already logged has applied its updates.
    pub(crate) fn exclude_appliers(&self) -> RwLockWriteGuard<'_, ()> {
        self.apply_gate.write()
    }
}

pub(crate) fn now_micros() -> i64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_micros() as i64)
}
