use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use parking_lot::Mutex;

use crate::disk::{IoTicket, SimDisk};

/// Where checkpoint pages and images go.
pub trait DataDevice: Send + Sync {
    /// Issues one page write without waiting for it.
    fn write_page(&self, bytes: &[u8]) -> io::Result<IoTicket>;
    /// Atomically replaces the stored image. Either the old or the new image
    /// survives a crash, never a mix.
    fn install_image(&self, image: &[u8]) -> io::Result<()>;
    fn load_image(&self) -> io::Result<Option<Vec<u8>>>;
    /// Page writes issued so far.
    fn ios(&self) -> u64;
}

pub const IMAGE_FILE: &str = "checkpoint.img";

/// Image kept in a directory: written to a temporary file, synced, then
/// renamed over the previous image.
pub struct FileDataDevice {
    dir: PathBuf,
    ios: AtomicU64,
}

impl FileDataDevice {
    pub fn open(dir: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(dir.as_ref())?;
        Ok(FileDataDevice { dir: dir.as_ref().to_path_buf(), ios: AtomicU64::new(0) })
    }

    pub fn image_path(&self) -> PathBuf {
        self.dir.join(IMAGE_FILE)
    }
}

impl DataDevice for FileDataDevice {
    // Page bytes reach the file with the image install; the write is
    // accounted here.
    fn write_page(&self, _bytes: &[u8]) -> io::Result<IoTicket> {
        self.ios.fetch_add(1, Ordering::Relaxed);
        Ok(IoTicket::done_now())
    }

    fn install_image(&self, image: &[u8]) -> io::Result<()> {
        let tmp = self.dir.join(format!("{IMAGE_FILE}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(image)?;
        f.sync_all()?;
        fs::rename(&tmp, self.image_path())?;
        File::open(&self.dir)?.sync_all()
    }

    fn load_image(&self) -> io::Result<Option<Vec<u8>>> {
        match fs::read(self.image_path()) {
            Ok(b) => Ok(Some(b)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn ios(&self) -> u64 {
        self.ios.load(Ordering::Relaxed)
    }
}

#[derive(Default)]
struct SimDataState {
    image: Option<Vec<u8>>,
    fail_after_writes: Option<u64>,
}

/// Simulated data disk. Each page write holds the (possibly shared) spindle
/// for `write_latency`.
pub struct SimDataDevice {
    disk: SimDisk,
    write_latency: Duration,
    state: Mutex<SimDataState>,
    ios: AtomicU64,
}

impl SimDataDevice {
    pub fn new(write_latency: Duration) -> Self {
        Self::on_disk(write_latency, SimDisk::new())
    }

    pub fn on_disk(write_latency: Duration, disk: SimDisk) -> Self {
        SimDataDevice {
            disk,
            write_latency,
            state: Mutex::new(SimDataState::default()),
            ios: AtomicU64::new(0),
        }
    }

    pub fn disk(&self) -> &SimDisk {
        &self.disk
    }

    pub fn image(&self) -> Option<Vec<u8>> {
        self.state.lock().image.clone()
    }

    /// Fails every page write after `n` more successful ones.
    pub fn fail_after_writes(&self, n: u64) {
        self.state.lock().fail_after_writes = Some(n);
    }

    pub fn clear_failure(&self) {
        self.state.lock().fail_after_writes = None;
    }
}

impl DataDevice for SimDataDevice {
    fn write_page(&self, _bytes: &[u8]) -> io::Result<IoTicket> {
        if let Some(left) = self.state.lock().fail_after_writes.as_mut() {
            if *left == 0 {
                return Err(io::Error::other("simulated data write failure"));
            }
            *left -= 1;
        }
        self.ios.fetch_add(1, Ordering::Relaxed);
        Ok(self.disk.submit(self.write_latency))
    }

    fn install_image(&self, image: &[u8]) -> io::Result<()> {
        self.state.lock().image = Some(image.to_vec());
        Ok(())
    }

    fn load_image(&self) -> io::Result<Option<Vec<u8>>> {
        Ok(self.image())
    }

    fn ios(&self) -> u64 {
        self.ios.load(Ordering::Relaxed)
    }
}
