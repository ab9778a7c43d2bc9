//! Log record serialization.
//!
//! Every record is laid out little-endian as
//!
//! ```text
//! | len u16 | kind u8 | txn_id u64 | lsn u64 | payload ... | crc32 u32 |
//! ```
//!
//! `len` counts the whole record including itself and the checksum. The
//! checksum is CRC-32 (IEEE) over every preceding byte of the record.
//!
//! Payloads by kind:
//!
//! | kind | code | payload |
//! |------|------|---------|
//! | update | 1 | `table u8, key u64, delta i64` |
//! | update (history) | 1 | `table u8 = 3, branch u64, amount i64, timestamp_us i64, teller u64, account u64` |
//! | commit | 2 | empty |
//! | abort | 3 | empty |
//! | checkpoint_begin | 4 | `checkpoint_id u64` |
//! | checkpoint_end | 5 | `checkpoint_id u64, begin_lsn u64, page_count u32` |

use thiserror::Error;

use super::Lsn;
use crate::engine::{HistoryRow, TableRank};
use crate::money::Money;

pub const RECORD_HEADER_LEN: usize = 2 + 1 + 8 + 8;
pub const RECORD_TRAILER_LEN: usize = 4;
/// Largest record the engine produces (history update).
pub const MAX_RECORD_LEN: usize = RECORD_HEADER_LEN + 41 + RECORD_TRAILER_LEN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum RecordKind {
    Update = 1,
    Commit = 2,
    Abort = 3,
    CheckpointBegin = 4,
    CheckpointEnd = 5,
}

impl RecordKind {
    fn from_u8(v: u8) -> Option<RecordKind> {
        Some(match v {
            1 => RecordKind::Update,
            2 => RecordKind::Commit,
            3 => RecordKind::Abort,
            4 => RecordKind::CheckpointBegin,
            5 => RecordKind::CheckpointEnd,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordBody {
    /// Redo delta for one balance row.
    Update { table: TableRank, key: u64, delta: Money },
    /// Append of one history row (an update against the History table).
    History(HistoryRow),
    Commit,
    Abort,
    CheckpointBegin { checkpoint_id: u64 },
    CheckpointEnd { checkpoint_id: u64, begin_lsn: Lsn, page_count: u32 },
}

impl RecordBody {
    pub fn kind(&self) -> RecordKind {
        match self {
            RecordBody::Update { .. } | RecordBody::History(_) => RecordKind::Update,
            RecordBody::Commit => RecordKind::Commit,
            RecordBody::Abort => RecordKind::Abort,
            RecordBody::CheckpointBegin { .. } => RecordKind::CheckpointBegin,
            RecordBody::CheckpointEnd { .. } => RecordKind::CheckpointEnd,
        }
    }

    fn payload_len(&self) -> usize {
        match self {
            RecordBody::Update { .. } => 17,
            RecordBody::History(_) => 41,
            RecordBody::Commit | RecordBody::Abort => 0,
            RecordBody::CheckpointBegin { .. } => 8,
            RecordBody::CheckpointEnd { .. } => 20,
        }
    }

    pub fn encoded_len(&self) -> usize {
        RECORD_HEADER_LEN + self.payload_len() + RECORD_TRAILER_LEN
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LogRecord {
    pub lsn: Lsn,
    pub txn_id: u64,
    pub body: RecordBody,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RecordError {
    #[error("record truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("record length {0} does not match its kind")]
    BadLength(usize),
    #[error("record checksum mismatch")]
    BadChecksum,
    #[error("unknown record kind {0}")]
    UnknownKind(u8),
    #[error("unknown table tag {0}")]
    UnknownTable(u8),
}

impl LogRecord {
    pub fn encoded_len(&self) -> usize {
        self.body.encoded_len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&(self.encoded_len() as u16).to_le_bytes());
        out.push(self.body.kind() as u8);
        out.extend_from_slice(&self.txn_id.to_le_bytes());
        out.extend_from_slice(&self.lsn.to_le_bytes());
        match self.body {
            RecordBody::Update { table, key, delta } => {
                out.push(table as u8);
                out.extend_from_slice(&key.to_le_bytes());
                out.extend_from_slice(&delta.micros().to_le_bytes());
            }
            RecordBody::History(h) => {
                out.push(TableRank::History as u8);
                out.extend_from_slice(&h.branch_id.to_le_bytes());
                out.extend_from_slice(&h.amount.micros().to_le_bytes());
                out.extend_from_slice(&h.timestamp_us.to_le_bytes());
                out.extend_from_slice(&h.teller_id.to_le_bytes());
                out.extend_from_slice(&h.account_id.to_le_bytes());
            }
            RecordBody::Commit | RecordBody::Abort => {}
            RecordBody::CheckpointBegin { checkpoint_id } => {
                out.extend_from_slice(&checkpoint_id.to_le_bytes());
            }
            RecordBody::CheckpointEnd { checkpoint_id, begin_lsn, page_count } => {
                out.extend_from_slice(&checkpoint_id.to_le_bytes());
                out.extend_from_slice(&begin_lsn.to_le_bytes());
                out.extend_from_slice(&page_count.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes one record from the front of `buf`, returning it with its length.
    pub fn decode(buf: &[u8]) -> Result<(LogRecord, usize), RecordError> {
        if buf.len() < RECORD_HEADER_LEN + RECORD_TRAILER_LEN {
            return Err(RecordError::Truncated {
                need: RECORD_HEADER_LEN + RECORD_TRAILER_LEN,
                have: buf.len(),
            });
        }
        let len = u16::from_le_bytes([buf[0], buf[1]]) as usize;
        if len < RECORD_HEADER_LEN + RECORD_TRAILER_LEN {
            return Err(RecordError::BadLength(len));
        }
        if buf.len() < len {
            return Err(RecordError::Truncated { need: len, have: buf.len() });
        }
        let (body_bytes, crc_bytes) = buf[..len].split_at(len - RECORD_TRAILER_LEN);
        let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
        if crc32fast::hash(body_bytes) != stored {
            return Err(RecordError::BadChecksum);
        }
        let kind_byte = buf[2];
        let kind = RecordKind::from_u8(kind_byte).ok_or(RecordError::UnknownKind(kind_byte))?;
        let txn_id = read_u64(buf, 3);
        let lsn = read_u64(buf, 11);
        let payload = &body_bytes[RECORD_HEADER_LEN..];
        let body = match kind {
            RecordKind::Update => {
                let tag = *payload.first().ok_or(RecordError::BadLength(len))?;
                let table = TableRank::from_u8(tag).ok_or(RecordError::UnknownTable(tag))?;
                match (table, payload.len()) {
                    (TableRank::History, 41) => RecordBody::History(HistoryRow {
                        branch_id: read_u64(payload, 1),
                        amount: Money::from_micros(read_u64(payload, 9) as i64),
                        timestamp_us: read_u64(payload, 17) as i64,
                        teller_id: read_u64(payload, 25),
                        account_id: read_u64(payload, 33),
                    }),
                    (TableRank::History, _) => return Err(RecordError::BadLength(len)),
                    (_, 17) => RecordBody::Update {
                        table,
                        key: read_u64(payload, 1),
                        delta: Money::from_micros(read_u64(payload, 9) as i64),
                    },
                    _ => return Err(RecordError::BadLength(len)),
                }
            }
            RecordKind::Commit | RecordKind::Abort => {
                if !payload.is_empty() {
                    return Err(RecordError::BadLength(len));
                }
                if kind == RecordKind::Commit {
                    RecordBody::Commit
                } else {
                    RecordBody::Abort
                }
            }
            RecordKind::CheckpointBegin => {
                if payload.len() != 8 {
                    return Err(RecordError::BadLength(len));
                }
                RecordBody::CheckpointBegin { checkpoint_id: read_u64(payload, 0) }
            }
            RecordKind::CheckpointEnd => {
                if payload.len() != 20 {
                    return Err(RecordError::BadLength(len));
                }
                RecordBody::CheckpointEnd {
                    checkpoint_id: read_u64(payload, 0),
                    begin_lsn: read_u64(payload, 8),
                    page_count: u32::from_le_bytes(payload[16..20].try_into().unwrap()),
                }
            }
        };
        Ok((LogRecord { lsn, txn_id, body }, len))
    }
}

fn read_u64(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arb_body() -> impl Strategy<Value = RecordBody> {
        prop_oneof![
            (0u8..3, any::<u64>(), any::<i64>()).prop_map(|(t, key, d)| RecordBody::Update {
                table: TableRank::from_u8(t).unwrap(),
                key,
                delta: Money::from_micros(d),
            }),
            (any::<u64>(), any::<i64>(), any::<i64>(), any::<u64>(), any::<u64>()).prop_map(
                |(b, a, ts, t, acc)| RecordBody::History(HistoryRow {
                    timestamp_us: ts,
                    branch_id: b,
                    teller_id: t,
                    account_id: acc,
                    amount: Money::from_micros(a),
                })
            ),
            Just(RecordBody::Commit),
            Just(RecordBody::Abort),
            any::<u64>().prop_map(|id| RecordBody::CheckpointBegin { checkpoint_id: id }),
            (any::<u64>(), any::<u64>(), any::<u32>()).prop_map(|(id, b, p)| {
                RecordBody::CheckpointEnd { checkpoint_id: id, begin_lsn: b, page_count: p }
            }),
        ]
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(lsn in any::<u64>(), txn_id in any::<u64>(), body in arb_body()) {
            let rec = LogRecord { lsn, txn_id, body };
            let bytes = rec.encode();
            prop_assert_eq!(bytes.len(), rec.encoded_len());
            prop_assert_eq!(LogRecord::decode(&bytes), Ok((rec, bytes.len())));
        }

        #[test]
        fn any_single_bit_flip_is_rejected(body in arb_body(), bit in 0usize..(MAX_RECORD_LEN * 8)) {
            let bytes = LogRecord { lsn: 5, txn_id: 9, body }.encode();
            let bit = bit % (bytes.len() * 8);
            let mut bad = bytes.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(LogRecord::decode(&bad).is_err());
        }
    }

    #[test]
    fn debit_credit_footprint() {
        let upd = RecordBody::Update { table: TableRank::Teller, key: 1, delta: Money::ZERO };
        let hist = RecordBody::History(HistoryRow {
            timestamp_us: 0,
            branch_id: 0,
            teller_id: 0,
            account_id: 0,
            amount: Money::ZERO,
        });
        assert_eq!(upd.encoded_len(), 40);
        assert_eq!(hist.encoded_len(), MAX_RECORD_LEN);
        assert_eq!(RecordBody::Commit.encoded_len(), 23);
        assert_eq!(3 * upd.encoded_len() + hist.encoded_len() + 23, 207);
    }

    #[test]
    fn truncated_record_is_reported() {
        let bytes = LogRecord { lsn: 1, txn_id: 1, body: RecordBody::Commit }.encode();
        assert_eq!(
            LogRecord::decode(&bytes[..bytes.len() - 1]),
            Err(RecordError::Truncated { need: 23, have: 22 })
        );
    }
}
