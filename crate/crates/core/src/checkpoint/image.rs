//! Checkpoint image format.
//!
//! ```text
//! header (28 bytes, little-endian)
//!   magic "MBCK" | begin_lsn u64 | end_lsn u64 | page_count u32 | image_checksum u32
//! page_count pages, each
//!   table u8 | first_key u64 | page_lsn u64 | row_count u16 | rows
//! rows
//!   balance tables: balance i64 per row
//!   history:        lsn u64 | timestamp_us i64 | branch u64 | teller u64 | account u64 | amount i64
//! ```
//!
//! `first_key` is the id of the page's first row (branch, teller or account
//! id), or the position of its first row for history. The checksum is CRC-32
//! over header bytes `0..24` followed by all page bytes.

use thiserror::Error;

use crate::engine::{HistoryEntry, HistoryRow, TableRank};
use crate::money::Money;
use crate::wal::Lsn;

pub const IMAGE_MAGIC: [u8; 4] = *b"MBCK";
pub const IMAGE_HEADER_LEN: usize = 28;
const PAGE_HEADER_LEN: usize = 1 + 8 + 8 + 2;
const HISTORY_ROW_LEN: usize = 48;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image truncated")]
    Truncated,
    #[error("bad image magic")]
    BadMagic,
    #[error("image checksum mismatch")]
    BadChecksum,
    #[error("bad page table tag {0}")]
    BadTable(u8),
    #[error("trailing bytes after last page")]
    TrailingBytes,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PageRows {
    Balances(Vec<Money>),
    History(Vec<HistoryEntry>),
}

impl PageRows {
    pub fn len(&self) -> usize {
        match self {
            PageRows::Balances(v) => v.len(),
            PageRows::History(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImagePage {
    pub table: TableRank,
    pub first_key: u64,
    pub page_lsn: Lsn,
    pub rows: PageRows,
}

impl ImagePage {
    fn encoded_len(&self) -> usize {
        PAGE_HEADER_LEN
            + match &self.rows {
                PageRows::Balances(v) => v.len() * 8,
                PageRows::History(v) => v.len() * HISTORY_ROW_LEN,
            }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.table as u8);
        out.extend_from_slice(&self.first_key.to_le_bytes());
        out.extend_from_slice(&self.page_lsn.to_le_bytes());
        out.extend_from_slice(&(self.rows.len() as u16).to_le_bytes());
        match &self.rows {
            PageRows::Balances(v) => {
                for m in v {
                    out.extend_from_slice(&m.micros().to_le_bytes());
                }
            }
            PageRows::History(v) => {
                for e in v {
                    out.extend_from_slice(&e.lsn.to_le_bytes());
                    out.extend_from_slice(&e.row.timestamp_us.to_le_bytes());
                    out.extend_from_slice(&e.row.branch_id.to_le_bytes());
                    out.extend_from_slice(&e.row.teller_id.to_le_bytes());
                    out.extend_from_slice(&e.row.account_id.to_le_bytes());
                    out.extend_from_slice(&e.row.amount.micros().to_le_bytes());
                }
            }
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    fn decode(buf: &[u8]) -> Result<(ImagePage, usize), ImageError> {
        if buf.len() < PAGE_HEADER_LEN {
            return Err(ImageError::Truncated);
        }
        let table = TableRank::from_u8(buf[0]).ok_or(ImageError::BadTable(buf[0]))?;
        let first_key = u64_at(buf, 1);
        let page_lsn = u64_at(buf, 9);
        let count = u16::from_le_bytes([buf[17], buf[18]]) as usize;
        let row_len = if table == TableRank::History { HISTORY_ROW_LEN } else { 8 };
        let len = PAGE_HEADER_LEN + count * row_len;
        if buf.len() < len {
            return Err(ImageError::Truncated);
        }
        let body = &buf[PAGE_HEADER_LEN..len];
        let rows = if table == TableRank::History {
            PageRows::History(
                body.chunks_exact(HISTORY_ROW_LEN)
                    .map(|r| HistoryEntry {
                        lsn: u64_at(r, 0),
                        row: HistoryRow {
                            timestamp_us: u64_at(r, 8) as i64,
                            branch_id: u64_at(r, 16),
                            teller_id: u64_at(r, 24),
                            account_id: u64_at(r, 32),
                            amount: Money::from_micros(u64_at(r, 40) as i64),
                        },
                    })
                    .collect(),
            )
        } else {
            PageRows::Balances(
                body.chunks_exact(8).map(|r| Money::from_micros(u64_at(r, 0) as i64)).collect(),
            )
        };
        Ok((ImagePage { table, first_key, page_lsn, rows }, len))
    }
}

/// A complete, self-validating checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointImage {
    pub begin_lsn: Lsn,
    pub end_lsn: Lsn,
    pub pages: Vec<ImagePage>,
}

impl CheckpointImage {
    pub fn encode(&self) -> Vec<u8> {
        let body_len: usize = self.pages.iter().map(ImagePage::encoded_len).sum();
        let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + body_len);
        out.extend_from_slice(&IMAGE_MAGIC);
        out.extend_from_slice(&self.begin_lsn.to_le_bytes());
        out.extend_from_slice(&self.end_lsn.to_le_bytes());
        out.extend_from_slice(&(self.pages.len() as u32).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
        for p in &self.pages {
            p.encode_into(&mut out);
        }
        let crc = image_checksum(&out);
        out[24..28].copy_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(buf: &[u8]) -> Result<CheckpointImage, ImageError> {
        if buf.len() < IMAGE_HEADER_LEN {
            return Err(ImageError::Truncated);
        }
        if buf[0..4] != IMAGE_MAGIC {
            return Err(ImageError::BadMagic);
        }
        if u32::from_le_bytes(buf[24..28].try_into().unwrap()) != image_checksum(buf) {
            return Err(ImageError::BadChecksum);
        }
        let begin_lsn = u64_at(buf, 4);
        let end_lsn = u64_at(buf, 12);
        let page_count = u32::from_le_bytes(buf[20..24].try_into().unwrap()) as usize;
        let mut pages = Vec::with_capacity(page_count);
        let mut at = IMAGE_HEADER_LEN;
        for _ in 0..page_count {
            let (page, len) = ImagePage::decode(&buf[at..])?;
            pages.push(page);
            at += len;
        }
        if at != buf.len() {
            return Err(ImageError::TrailingBytes);
        }
        Ok(CheckpointImage { begin_lsn, end_lsn, pages })
    }

    pub fn data_page_count(&self) -> usize {
        self.pages.len()
    }
}

fn image_checksum(buf: &[u8]) -> u32 {
    let mut h = crc32fast::Hasher::new();
    h.update(&buf[0..24]);
    h.update(&buf[IMAGE_HEADER_LEN..]);
    h.finalize()
}

fn u64_at(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}
