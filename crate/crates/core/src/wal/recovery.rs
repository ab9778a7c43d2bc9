//! Redo recovery.
//!
//! Recovery loads the checkpoint image when one is supplied and valid, then
//! scans the log from the page holding the image's `checkpoint_begin`
//! record. Records of a transaction are buffered until its commit record is
//! read; uncommitted and aborted work is dropped. A balance delta is redone
//! only when its lsn is above the page lsn stored in the image, and a history
//! append only when the image does not already hold that lsn.
//!
//! The scan ends at the end of the log, at a record that fails its checksum,
//! at an lsn discontinuity, or after the first page whose page checksum
//! fails. Records of such a torn page are kept up to the first bad record:
//! rewriting a partially filled page leaves its earlier records bit-identical,
//! so a torn rewrite only damages what was being appended.

use std::collections::{HashMap, HashSet};
use std::io;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::device::LogDevice;
use super::log::LogTail;
use super::page::{LogPage, PAGE_HEADER_LEN, PAGE_SIZE};
use super::record::{LogRecord, RecordBody};
use super::Lsn;
use crate::checkpoint::{CheckpointImage, ImageError, PageRows};
use crate::engine::{Bank, EngineError, HistoryEntry, ScaleConfig, TableRank, ROWS_PER_PAGE};

#[derive(Debug, Error)]
pub enum RecoveryError {
    #[error("log device: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("checkpoint image ({image}) and log ({log}) are both unusable")]
    Unrecoverable { image: String, log: String },
    #[error("log record lsn {lsn} names {table:?} key {key}, which this bank does not have")]
    ForeignKey { lsn: Lsn, table: TableRank, key: u64 },
}

/// Why the log scan ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanStop {
    EndOfLog,
    /// Page checksum failed; its valid record prefix was kept.
    TornPage { page: u64 },
    /// A record failed to decode on an otherwise valid page.
    BadRecord { page: u64 },
    LsnGap { page: u64, expected: Lsn, found: Lsn },
    /// The first page is not a log page at all.
    CorruptLog,
}

#[derive(Debug)]
pub struct RecoveryOutcome {
    pub bank: Bank,
    /// Image actually used, if any.
    pub image: Option<CheckpointImage>,
    /// Why a supplied image was ignored.
    pub image_rejected: Option<ImageError>,
    /// Commit lsns of redone transactions, in log order.
    pub committed: Vec<Lsn>,
    /// Records read past the image's begin lsn (or the whole log).
    pub records_scanned: u64,
    pub redo_applied: u64,
    pub last_lsn: Lsn,
    pub next_txn_id: u64,
    pub stop: ScanStop,
    pub tail: LogTail,
    pub elapsed: Duration,
}

impl RecoveryOutcome {
    pub fn replay_rate(&self) -> Option<f64> {
        let secs = self.elapsed.as_secs_f64();
        (secs > 0.0 && self.records_scanned > 0).then(|| self.records_scanned as f64 / secs)
    }
}

/// Rebuilds the committed state from `device` and an optional image.
pub fn recover(
    device: &dyn LogDevice,
    image: Option<&[u8]>,
    config: &ScaleConfig,
) -> Result<RecoveryOutcome, RecoveryError> {
    let started = Instant::now();
    let mut image_rejected = None;
    let mut loaded = None;
    if let Some(bytes) = image {
        match CheckpointImage::decode(bytes).and_then(|img| load_image(img, config)) {
            Ok(l) => loaded = Some(l),
            Err(e) => image_rejected = Some(e),
        }
    }

    let log_corrupt = first_page_corrupt(device)?;
    let (bank, image, captured_history) = match loaded {
        Some(l) => (l.bank, Some(l.image), l.history_lsns),
        None if log_corrupt => {
            return Err(RecoveryError::Unrecoverable {
                image: image_rejected.map_or("absent".into(), |e| e.to_string()),
                log: "first page is not a log page".into(),
            })
        }
        None => (Bank::create(*config)?, None, HashSet::new()),
    };
    let begin = image.as_ref().map_or(0, |i| i.begin_lsn);

    let mut replay = Replay {
        bank,
        begin,
        captured_history,
        pending: HashMap::new(),
        committed: Vec::new(),
        records_scanned: 0,
        redo_applied: 0,
        max_txn_id: 0,
    };

    let (stop, tail) = if log_corrupt {
        (ScanStop::CorruptLog, LogTail::empty())
    } else {
        replay.scan(device)?
    };

    Ok(RecoveryOutcome {
        image,
        image_rejected,
        committed: replay.committed,
        records_scanned: replay.records_scanned,
        redo_applied: replay.redo_applied,
        last_lsn: tail.next_lsn - 1,
        next_txn_id: replay.max_txn_id + 1,
        stop,
        tail,
        elapsed: started.elapsed(),
        bank: replay.bank,
    })
}

fn first_page_corrupt(device: &dyn LogDevice) -> io::Result<bool> {
    if device.len_bytes()? < 4 {
        return Ok(false);
    }
    Ok(!LogPage::from_bytes(&device.read_page(0)?).has_magic())
}

struct LoadedImage {
    bank: Bank,
    image: CheckpointImage,
    history_lsns: HashSet<Lsn>,
}

fn load_image(image: CheckpointImage, config: &ScaleConfig) -> Result<LoadedImage, ImageError> {
    let bank = Bank::create(*config).map_err(|_| ImageError::Truncated)?;
    let mut history: Vec<(u64, &[HistoryEntry])> = Vec::new();
    for page in &image.pages {
        match &page.rows {
            PageRows::Balances(rows) => {
                let idx = bank
                    .index_of(page.table, page.first_key)
                    .filter(|i| i % ROWS_PER_PAGE == 0)
                    .ok_or(ImageError::BadTable(page.table as u8))?;
                let table = bank.table(page.table);
                let page_no = idx / ROWS_PER_PAGE;
                if table.page_range(page_no).len() != rows.len() {
                    return Err(ImageError::Truncated);
                }
                bank.restore_page(page.table, page_no, rows, page.page_lsn);
            }
            PageRows::History(rows) => history.push((page.first_key, rows)),
        }
    }
    history.sort_by_key(|(k, _)| *k);
    let mut expected = 0u64;
    for (first, rows) in &history {
        if *first != expected {
            return Err(ImageError::Truncated);
        }
        expected += rows.len() as u64;
    }
    let begin = image.begin_lsn;
    let history_lsns = history
        .iter()
        .flat_map(|(_, rows)| rows.iter())
        .filter(|e| e.lsn > begin)
        .map(|e| e.lsn)
        .collect();
    bank.extend_history(history.iter().flat_map(|(_, rows)| rows.iter().copied()));
    Ok(LoadedImage { bank, image, history_lsns })
}

struct Replay {
    bank: Bank,
    begin: Lsn,
    captured_history: HashSet<Lsn>,
    pending: HashMap<u64, Vec<(Lsn, RecordBody)>>,
    committed: Vec<Lsn>,
    records_scanned: u64,
    redo_applied: u64,
    max_txn_id: u64,
}

impl Replay {
    fn scan(&mut self, device: &dyn LogDevice) -> Result<(ScanStop, LogTail), RecoveryError> {
        let pages = device.page_count()?;
        let start = if self.begin == 0 { 0 } else { locate_page(device, pages, self.begin)? };
        let mut prev: Option<Lsn> = None;
        let mut tail = LogTail { page_index: start, page: LogPage::new(1), next_lsn: 1 };

        for index in start..pages {
            let raw = device.read_page(index)?;
            let page = LogPage::from_bytes(&raw);
            if !page.has_magic() {
                return Ok((ScanStop::EndOfLog, self.tail_after(tail, index, prev)));
            }
            if raw.len() < PAGE_HEADER_LEN {
                return Ok((ScanStop::TornPage { page: index }, self.tail_after(tail, index, prev)));
            }
            let intact = raw.len() == PAGE_SIZE && page.verify();
            let mut expected = prev.map_or(page.first_lsn(), |p| p + 1);
            if page.first_lsn() != expected {
                let stop = ScanStop::LsnGap { page: index, expected, found: page.first_lsn() };
                return Ok((stop, self.tail_after(tail, index, prev)));
            }
            let readable = raw.len() - PAGE_HEADER_LEN;
            let mut kept = LogPage::new(expected);
            let mut records = page.records();
            let mut bad = false;
            loop {
                let before = records.offset();
                let Some(next) = records.next() else { break };
                match next {
                    Ok(rec) if rec.lsn == expected && records.offset() <= readable => {
                        kept.push(&page.payload()[before..records.offset()]);
                        self.apply(rec)?;
                        prev = Some(rec.lsn);
                        expected += 1;
                    }
                    _ => {
                        bad = true;
                        break;
                    }
                }
            }
            tail = LogTail { page_index: index, page: kept, next_lsn: expected };
            if !intact {
                return Ok((ScanStop::TornPage { page: index }, tail));
            }
            if bad {
                return Ok((ScanStop::BadRecord { page: index }, tail));
            }
        }
        let next = prev.map_or(1, |p| p + 1);
        if pages == start {
            tail = LogTail { page_index: start, page: LogPage::new(next), next_lsn: next };
        }
        Ok((ScanStop::EndOfLog, tail))
    }

    /// Tail when the scan stops before reading anything from page `index`.
    fn tail_after(&self, tail: LogTail, index: u64, prev: Option<Lsn>) -> LogTail {
        let next = prev.map_or(1, |p| p + 1);
        if index == tail.page_index {
            LogTail { page_index: index, page: LogPage::new(next), next_lsn: next }
        } else {
            tail
        }
    }

    fn apply(&mut self, rec: LogRecord) -> Result<(), RecoveryError> {
        self.max_txn_id = self.max_txn_id.max(rec.txn_id);
        if rec.lsn <= self.begin {
            return Ok(());
        }
        self.records_scanned += 1;
        match rec.body {
            RecordBody::Update { .. } | RecordBody::History(_) => {
                self.pending.entry(rec.txn_id).or_default().push((rec.lsn, rec.body));
            }
            RecordBody::Commit => {
                for (lsn, body) in self.pending.remove(&rec.txn_id).unwrap_or_default() {
                    self.redo(lsn, body)?;
                }
                self.committed.push(rec.lsn);
            }
            RecordBody::Abort => {
                self.pending.remove(&rec.txn_id);
            }
            RecordBody::CheckpointBegin { .. } | RecordBody::CheckpointEnd { .. } => {}
        }
        Ok(())
    }

    fn redo(&mut self, lsn: Lsn, body: RecordBody) -> Result<(), RecoveryError> {
        match body {
            RecordBody::Update { table, key, delta } => {
                let idx = self
                    .bank
                    .index_of(table, key)
                    .ok_or(RecoveryError::ForeignKey { lsn, table, key })?;
                if self.bank.redo_delta(table, idx, delta, lsn) {
                    self.redo_applied += 1;
                }
            }
            RecordBody::History(row) => {
                if !self.captured_history.contains(&lsn) {
                    self.bank.push_history(HistoryEntry { lsn, row });
                    self.redo_applied += 1;
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// Last page whose first lsn is ≤ `lsn`.
fn locate_page(device: &dyn LogDevice, pages: u64, lsn: Lsn) -> io::Result<u64> {
    let (mut lo, mut hi) = (0u64, pages);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        let page = LogPage::from_bytes(&device.read_page(mid)?);
        if page.has_magic() && page.first_lsn() <= lsn {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
