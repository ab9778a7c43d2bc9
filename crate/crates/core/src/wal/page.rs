//! Fixed 512-byte log pages.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "MBLG"
//!      4     8  first_lsn (lsn of the first record on the page)
//!     12     2  payload_len (bytes of packed records)
//!     14     4  page_checksum
//!     18   494  records packed back to back, zero padded
//! ```
//!
//! The page checksum is CRC-32 over bytes `0..14` followed by `18..512`.
//! Records never straddle pages.

use super::record::{LogRecord, RecordError};
use super::Lsn;

pub const PAGE_SIZE: usize = 512;
pub const PAGE_HEADER_LEN: usize = 18;
pub const PAGE_PAYLOAD_CAPACITY: usize = PAGE_SIZE - PAGE_HEADER_LEN;
pub const PAGE_MAGIC: [u8; 4] = *b"MBLG";

#[derive(Clone)]
pub struct LogPage {
    bytes: Box<[u8; PAGE_SIZE]>,
}

impl std::fmt::Debug for LogPage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogPage")
            .field("first_lsn", &self.first_lsn())
            .field("payload_len", &self.payload_len())
            .finish()
    }
}

impl LogPage {
    pub fn new(first_lsn: Lsn) -> Self {
        let mut bytes = Box::new([0u8; PAGE_SIZE]);
        bytes[0..4].copy_from_slice(&PAGE_MAGIC);
        bytes[4..12].copy_from_slice(&first_lsn.to_le_bytes());
        LogPage { bytes }
    }

    /// Wraps raw device bytes. Short input is zero-extended.
    pub fn from_bytes(raw: &[u8]) -> Self {
        let mut bytes = Box::new([0u8; PAGE_SIZE]);
        let n = raw.len().min(PAGE_SIZE);
        bytes[..n].copy_from_slice(&raw[..n]);
        LogPage { bytes }
    }

    pub fn has_magic(&self) -> bool {
        self.bytes[0..4] == PAGE_MAGIC
    }

    pub fn first_lsn(&self) -> Lsn {
        u64::from_le_bytes(self.bytes[4..12].try_into().unwrap())
    }

    pub fn payload_len(&self) -> usize {
        u16::from_le_bytes([self.bytes[12], self.bytes[13]]) as usize
    }

    pub fn remaining(&self) -> usize {
        PAGE_PAYLOAD_CAPACITY - self.payload_len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload_len() == 0
    }

    /// Appends encoded record bytes. Caller checks `remaining()` first.
    pub fn push(&mut self, record: &[u8]) {
        let len = self.payload_len();
        assert!(record.len() <= PAGE_PAYLOAD_CAPACITY - len, "record does not fit page");
        let at = PAGE_HEADER_LEN + len;
        self.bytes[at..at + record.len()].copy_from_slice(record);
        self.bytes[12..14].copy_from_slice(&((len + record.len()) as u16).to_le_bytes());
    }

    fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&self.bytes[0..14]);
        h.update(&self.bytes[18..]);
        h.finalize()
    }

    /// Stamps the checksum; call before handing the page to the device.
    pub fn seal(&mut self) {
        let crc = self.checksum();
        self.bytes[14..18].copy_from_slice(&crc.to_le_bytes());
    }

    pub fn verify(&self) -> bool {
        self.has_magic()
            && self.payload_len() <= PAGE_PAYLOAD_CAPACITY
            && u32::from_le_bytes(self.bytes[14..18].try_into().unwrap()) == self.checksum()
    }

    pub fn as_bytes(&self) -> &[u8; PAGE_SIZE] {
        &self.bytes
    }

    /// Payload bytes as claimed by the header, clamped to the page.
    pub fn payload(&self) -> &[u8] {
        let len = self.payload_len().min(PAGE_PAYLOAD_CAPACITY);
        &self.bytes[PAGE_HEADER_LEN..PAGE_HEADER_LEN + len]
    }

    /// Decodes records in order, stopping at the first that fails to decode.
    pub fn records(&self) -> PageRecords<'_> {
        PageRecords { buf: self.payload(), offset: 0 }
    }
}

pub struct PageRecords<'a> {
    buf: &'a [u8],
    offset: usize,
}

impl PageRecords<'_> {
    /// Byte offset (within the payload) just past the last returned record.
    pub fn offset(&self) -> usize {
        self.offset
    }
}

impl Iterator for PageRecords<'_> {
    type Item = Result<LogRecord, RecordError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.offset >= self.buf.len() {
            return None;
        }
        match LogRecord::decode(&self.buf[self.offset..]) {
            Ok((rec, len)) => {
                self.offset += len;
                Some(Ok(rec))
            }
            Err(e) => {
                self.offset = self.buf.len();
                Some(Err(e))
            }
        }
    }
}
