use std::sync::atomic::{AtomicU64, Ordering};

use parking_lot::{Mutex, MutexGuard};
use serde::{Deserialize, Serialize};

use crate::money::Money;
use crate::wal::Lsn;

/// Rows per table page; the unit of dirty tracking and checkpoint IO.
pub const ROWS_PER_PAGE: usize = 256;

/// Table identity. The discriminant doubles as the lock-ordering rank and the
/// on-disk table tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TableRank {
    Branch = 0,
    Teller = 1,
    Account = 2,
    History = 3,
}

impl TableRank {
    pub const BALANCE_TABLES: [TableRank; 3] =
        [TableRank::Branch, TableRank::Teller, TableRank::Account];

    pub fn from_u8(v: u8) -> Option<TableRank> {
        match v {
            0 => Some(TableRank::Branch),
            1 => Some(TableRank::Teller),
            2 => Some(TableRank::Account),
            3 => Some(TableRank::History),
            _ => None,
        }
    }
}

/// One bit per table page, set on update and cleared when the page is
/// captured by a checkpoint.
pub struct DirtyMap {
    words: Box<[AtomicU64]>,
    pages: usize,
}

impl DirtyMap {
    pub fn new(pages: usize) -> Self {
        let words = (0..pages.div_ceil(64)).map(|_| AtomicU64::new(0)).collect();
        DirtyMap { words, pages }
    }

    pub fn len(&self) -> usize {
        self.pages
    }

    pub fn is_empty(&self) -> bool {
        self.pages == 0
    }

    pub fn mark(&self, page: usize) {
        let bit = 1u64 << (page % 64);
        let word = &self.words[page / 64];
        // Avoid the RMW when the bit is already set; most updates hit dirty pages.
        if word.load(Ordering::Relaxed) & bit == 0 {
            word.fetch_or(bit, Ordering::AcqRel);
        }
    }

    /// Clears the bit and reports whether it was set.
    pub fn clear(&self, page: usize) -> bool {
        let bit = 1u64 << (page % 64);
        self.words[page / 64].fetch_and(!bit, Ordering::AcqRel) & bit != 0
    }

    pub fn is_dirty(&self, page: usize) -> bool {
        self.words[page / 64].load(Ordering::Acquire) & (1u64 << (page % 64)) != 0
    }

    pub fn dirty_pages(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for (w, word) in self.words.iter().enumerate() {
            let mut bits = word.load(Ordering::Acquire);
            while bits != 0 {
                let b = bits.trailing_zeros() as usize;
                out.push(w * 64 + b);
                bits &= bits - 1;
            }
        }
        out
    }

    pub fn count(&self) -> usize {
        self.words
            .iter()
            .map(|w| w.load(Ordering::Relaxed).count_ones() as usize)
            .sum()
    }
}

/// Dense balance table: row `i` holds the balance of the i-th id in key order.
pub(crate) struct Table {
    rows: Box<[Mutex<Money>]>,
    page_lsn: Box<[AtomicU64]>,
    dirty: DirtyMap,
}

impl Table {
    pub(crate) fn new(rows: usize) -> Self {
        let pages = rows.div_ceil(ROWS_PER_PAGE);
        Table {
            rows: (0..rows).map(|_| Mutex::new(Money::ZERO)).collect(),
            page_lsn: (0..pages).map(|_| AtomicU64::new(0)).collect(),
            dirty: DirtyMap::new(pages),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows.len()
    }

    pub(crate) fn lock(&self, idx: usize) -> MutexGuard<'_, Money> {
        self.rows[idx].lock()
    }

    pub(crate) fn read(&self, idx: usize) -> Money {
        *self.rows[idx].lock()
    }

    /// Records that the update logged at `lsn` has been applied to row `idx`.
    /// Caller holds the row lock.
    pub(crate) fn note_update(&self, idx: usize, lsn: Lsn) {
        let page = idx / ROWS_PER_PAGE;
        self.page_lsn[page].fetch_max(lsn, Ordering::AcqRel);
        self.dirty.mark(page);
    }

    pub(crate) fn page_lsn(&self, page: usize) -> Lsn {
        self.page_lsn[page].load(Ordering::Acquire)
    }

    pub(crate) fn set_page_lsn(&self, page: usize, lsn: Lsn) {
        self.page_lsn[page].store(lsn, Ordering::Release);
    }

    pub(crate) fn dirty(&self) -> &DirtyMap {
        &self.dirty
    }

    pub(crate) fn page_range(&self, page: usize) -> std::ops::Range<usize> {
        let start = page * ROWS_PER_PAGE;
        start..(start + ROWS_PER_PAGE).min(self.rows.len())
    }

    /// Page-consistent copy: every row lock on the page is held, so no
    /// transaction is between logging and applying an update to this page.
    /// Clears the page's dirty bit.
    pub(crate) fn capture_page(&self, page: usize) -> (Vec<Money>, Lsn) {
        let range = self.page_range(page);
        let guards: Vec<_> = self.rows[range].iter().map(|m| m.lock()).collect();
        let lsn = self.page_lsn(page);
        self.dirty.clear(page);
        (guards.iter().map(|g| **g).collect(), lsn)
    }

    pub(crate) fn sum(&self) -> Money {
        self.rows.iter().map(|m| *m.lock()).sum()
    }
}
