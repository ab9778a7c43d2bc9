use std::fs::{File, OpenOptions};
use std::io;
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::Mutex;

use super::page::PAGE_SIZE;
use crate::disk::SimDisk;

/// Block device holding the log. All writes are whole 512-byte pages at
/// 512-aligned offsets.
pub trait LogDevice: Send + Sync {
    fn write_page(&self, index: u64, page: &[u8; PAGE_SIZE]) -> io::Result<()>;
    /// Makes every previously written page durable.
    fn sync(&self) -> io::Result<()>;
    fn len_bytes(&self) -> io::Result<u64>;
    /// Reads one page; the final page of a truncated log may come back short.
    fn read_page(&self, index: u64) -> io::Result<Vec<u8>>;
    /// Drops every page at or past `pages`.
    fn truncate_pages(&self, pages: u64) -> io::Result<()>;
    /// Page writes issued so far.
    fn page_writes(&self) -> u64;

    fn page_count(&self) -> io::Result<u64> {
        Ok(self.len_bytes()?.div_ceil(PAGE_SIZE as u64))
    }
}

pub struct FileLogDevice {
    file: File,
    writes: AtomicU64,
}

impl FileLogDevice {
    pub fn open(path: impl AsRef<Path>) -> io::Result<Self> {
        let file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        Ok(FileLogDevice { file, writes: AtomicU64::new(0) })
    }
}

impl LogDevice for FileLogDevice {
    fn write_page(&self, index: u64, page: &[u8; PAGE_SIZE]) -> io::Result<()> {
        self.file.write_all_at(page, index * PAGE_SIZE as u64)?;
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn sync(&self) -> io::Result<()> {
        self.file.sync_data()
    }

    fn len_bytes(&self) -> io::Result<u64> {
        Ok(self.file.metadata()?.len())
    }

    fn read_page(&self, index: u64) -> io::Result<Vec<u8>> {
        let len = self.len_bytes()?;
        let start = index * PAGE_SIZE as u64;
        let n = len.saturating_sub(start).min(PAGE_SIZE as u64) as usize;
        let mut buf = vec![0u8; n];
        self.file.read_exact_at(&mut buf, start)?;
        Ok(buf)
    }

    fn truncate_pages(&self, pages: u64) -> io::Result<()> {
        self.file.set_len(pages * PAGE_SIZE as u64)?;
        self.file.sync_all()
    }

    fn page_writes(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }
}

/// Latency model of a simulated log device.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimLogConfig {
    /// Service time of one log force.
    pub flush_latency: Duration,
    /// Charged per page read during recovery.
    pub read_latency: Duration,
}

#[derive(Default)]
struct SimState {
    bytes: Vec<u8>,
    crashed: bool,
    fail_after_writes: Option<u64>,
}

/// In-memory log device with a latency model and crash hooks.
pub struct SimLogDevice {
    state: Mutex<SimState>,
    config: SimLogConfig,
    disk: SimDisk,
    writes: AtomicU64,
    syncs: AtomicU64,
}

impl SimLogDevice {
    pub fn new(config: SimLogConfig) -> Self {
        Self::on_disk(config, SimDisk::new())
    }

    /// A log device sharing `disk`'s service queue with other devices.
    pub fn on_disk(config: SimLogConfig, disk: SimDisk) -> Self {
        SimLogDevice {
            state: Mutex::new(SimState::default()),
            config,
            disk,
            writes: AtomicU64::new(0),
            syncs: AtomicU64::new(0),
        }
    }

    /// Device preloaded with raw log bytes, e.g. a truncated copy of another log.
    pub fn from_bytes(bytes: Vec<u8>, config: SimLogConfig) -> Self {
        let dev = Self::new(config);
        dev.state.lock().bytes = bytes;
        dev
    }

    pub fn config(&self) -> SimLogConfig {
        self.config
    }

    pub fn disk(&self) -> &SimDisk {
        &self.disk
    }

    /// Current device contents.
    pub fn contents(&self) -> Vec<u8> {
        self.state.lock().bytes.clone()
    }

    /// Freezes the device: contents stay as they are and every later write or
    /// sync fails, as if power was cut.
    pub fn crash(&self) {
        self.state.lock().crashed = true;
    }

    pub fn is_crashed(&self) -> bool {
        self.state.lock().crashed
    }

    /// Fails every page write after `n` more successful ones.
    pub fn fail_after_writes(&self, n: u64) {
        self.state.lock().fail_after_writes = Some(n);
    }

    /// Keeps only the first `len` bytes.
    pub fn truncate_bytes(&self, len: u64) {
        let mut st = self.state.lock();
        let len = (len as usize).min(st.bytes.len());
        st.bytes.truncate(len);
    }

    pub fn syncs(&self) -> u64 {
        self.syncs.load(Ordering::Relaxed)
    }
}

fn crashed() -> io::Error {
    io::Error::other("simulated device crashed")
}

impl LogDevice for SimLogDevice {
    fn write_page(&self, index: u64, page: &[u8; PAGE_SIZE]) -> io::Result<()> {
        let mut st = self.state.lock();
        if st.crashed {
            return Err(crashed());
        }
        if let Some(left) = st.fail_after_writes.as_mut() {
            if *left == 0 {
                return Err(io::Error::other("simulated write failure"));
            }
            *left -= 1;
        }
        let start = index as usize * PAGE_SIZE;
        if st.bytes.len() < start + PAGE_SIZE {
            st.bytes.resize(start + PAGE_SIZE, 0);
        }
        st.bytes[start..start + PAGE_SIZE].copy_from_slice(page);
        self.writes.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    fn sync(&self) -> io::Result<()> {
        if self.state.lock().crashed {
            return Err(crashed());
        }
        self.disk.io(self.config.flush_latency);
        self.syncs.fetch_add(1, Ordering::Relaxed);
        if self.state.lock().crashed {
            return Err(crashed());
        }
        Ok(())
    }

    fn len_bytes(&self) -> io::Result<u64> {
        Ok(self.state.lock().bytes.len() as u64)
    }

    fn read_page(&self, index: u64) -> io::Result<Vec<u8>> {
        if !self.config.read_latency.is_zero() {
            self.disk.io(self.config.read_latency);
        }
        let st = self.state.lock();
        let start = (index as usize * PAGE_SIZE).min(st.bytes.len());
        let end = (start + PAGE_SIZE).min(st.bytes.len());
        Ok(st.bytes[start..end].to_vec())
    }

    fn truncate_pages(&self, pages: u64) -> io::Result<()> {
        let mut st = self.state.lock();
        let len = (pages as usize * PAGE_SIZE).min(st.bytes.len());
        st.bytes.truncate(len);
        Ok(())
    }

    fn page_writes(&self) -> u64 {
        self.writes.load(Ordering::Relaxed)
    }
}
