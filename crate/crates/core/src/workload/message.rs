//! TPC-A style 100-byte request and response envelopes.
//!
//! ```text
//! request:  teller_id u64 | account_id u64 | amount i64 | client_tag u64 | 68 zero bytes
//! response: status u8 | new_balance i64 | commit_lsn u64 | client_tag u64 | 75 zero bytes
//! ```
//! All integers little-endian; amounts and balances in micro-dollars.
//! Status 0 is committed, 1 aborted, 2 failed.

use thiserror::Error;

use super::TxnRequest;
use crate::money::Money;
use crate::wal::Lsn;

pub const MESSAGE_LEN: usize = 100;
const REQUEST_FIELDS: usize = 32;
const RESPONSE_FIELDS: usize = 25;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("message is {0} bytes, expected 100")]
    WrongLength(usize),
    #[error("nonzero padding byte at offset {0}")]
    NonZeroPadding(usize),
    #[error("unknown status {0}")]
    UnknownStatus(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TxnStatus {
    Committed = 0,
    Aborted = 1,
    Failed = 2,
}

impl TxnStatus {
    pub fn from_u8(b: u8) -> Option<TxnStatus> {
        match b {
            0 => Some(TxnStatus::Committed),
            1 => Some(TxnStatus::Aborted),
            2 => Some(TxnStatus::Failed),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RequestMessage {
    pub request: TxnRequest,
    pub client_tag: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseMessage {
    pub status: TxnStatus,
    pub new_balance: Money,
    pub commit_lsn: Lsn,
    pub client_tag: u64,
}

pub fn encode_request(msg: &RequestMessage) -> [u8; MESSAGE_LEN] {
    let mut out = [0u8; MESSAGE_LEN];
    out[0..8].copy_from_slice(&msg.request.teller_id.to_le_bytes());
    out[8..16].copy_from_slice(&msg.request.account_id.to_le_bytes());
    out[16..24].copy_from_slice(&msg.request.amount.micros().to_le_bytes());
    out[24..32].copy_from_slice(&msg.client_tag.to_le_bytes());
    out
}

pub fn decode_request(bytes: &[u8]) -> Result<RequestMessage, MessageError> {
    check_frame(bytes, REQUEST_FIELDS)?;
    Ok(RequestMessage {
        request: TxnRequest {
            teller_id: u64_at(bytes, 0),
            account_id: u64_at(bytes, 8),
            amount: Money::from_micros(u64_at(bytes, 16) as i64),
        },
        client_tag: u64_at(bytes, 24),
    })
}

pub fn encode_response(msg: &ResponseMessage) -> [u8; MESSAGE_LEN] {
    let mut out = [0u8; MESSAGE_LEN];
    out[0] = msg.status as u8;
    out[1..9].copy_from_slice(&msg.new_balance.micros().to_le_bytes());
    out[9..17].copy_from_slice(&msg.commit_lsn.to_le_bytes());
    out[17..25].copy_from_slice(&msg.client_tag.to_le_bytes());
    out
}

pub fn decode_response(bytes: &[u8]) -> Result<ResponseMessage, MessageError> {
    check_frame(bytes, RESPONSE_FIELDS)?;
    let status = TxnStatus::from_u8(bytes[0]).ok_or(MessageError::UnknownStatus(bytes[0]))?;
    Ok(ResponseMessage {
        status,
        new_balance: Money::from_micros(u64_at(bytes, 1) as i64),
        commit_lsn: u64_at(bytes, 9),
        client_tag: u64_at(bytes, 17),
    })
}

fn check_frame(bytes: &[u8], fields: usize) -> Result<(), MessageError> {
    if bytes.len() != MESSAGE_LEN {
        return Err(MessageError::WrongLength(bytes.len()));
    }
    match bytes[fields..].iter().position(|&b| b != 0) {
        Some(i) => Err(MessageError::NonZeroPadding(fields + i)),
        None => Ok(()),
    }
}

fn u64_at(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}
