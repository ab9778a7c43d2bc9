use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::checkpoint::{
    CheckpointImage, CheckpointMode, CheckpointPolicy, Checkpointer, DataDevice, FileDataDevice, SimDataDevice,
};
use crate::disk::SimDisk;
use crate::engine::{Bank, Engine, ScaleConfig};
use crate::wal::{
    recover, FileLogDevice, LogDevice, Lsn, RecoveryOutcome, ScanStop, SimLogConfig, SimLogDevice, Wal, WalConfig,
};

pub const CONFIG_FILE: &str = "minibank.json";
pub const LOG_FILE: &str = "log";

#[derive(Debug, Clone, PartialEq)]
pub enum LogSpec {
    Sim(SimLogConfig),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Sim { write_latency: Duration },
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RigSpec {
    pub scale: ScaleConfig,
    pub log: LogSpec,
    pub data: DataSpec,
    /// Simulated log and data devices queue on one spindle.
    pub shared_spindle: bool,
}

impl RigSpec {
    pub fn sim(branches: u32, flush_latency: Duration) -> RigSpec {
        RigSpec {
            scale: ScaleConfig::new(branches),
            log: LogSpec::Sim(SimLogConfig { flush_latency, ..Default::default() }),
            data: DataSpec::Sim { write_latency: Duration::ZERO },
            shared_spindle: false,
        }
    }
}

/// What a directory-backed bank was created with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoredConfig {
    pub branches: u32,
}

/// Recovery statistics without the rebuilt bank.
#[derive(Debug, Clone)]
pub struct Recovered {
    pub image_begin: Option<Lsn>,
    pub image_rejected: Option<String>,
    pub committed: usize,
    pub records_scanned: u64,
    pub redo_applied: u64,
    pub last_lsn: Lsn,
    pub stop: ScanStop,
    pub elapsed: Duration,
}

impl Recovered {
    pub fn of(outcome: &RecoveryOutcome) -> Recovered {
        Recovered {
            image_begin: outcome.image.as_ref().map(|i| i.begin_lsn),
            image_rejected: outcome.image_rejected.as_ref().map(|e| e.to_string()),
            committed: outcome.committed.len(),
            records_scanned: outcome.records_scanned,
            redo_applied: outcome.redo_applied,
            last_lsn: outcome.last_lsn,
            stop: outcome.stop,
            elapsed: outcome.elapsed,
        }
    }
}

/// Engine plus the devices under it.
pub struct Rig {
    pub engine: Arc<Engine>,
    pub log: Arc<dyn LogDevice>,
    pub data: Arc<dyn DataDevice>,
    pub sim_log: Option<Arc<SimLogDevice>>,
    pub sim_data: Option<Arc<SimDataDevice>>,
}

impl Rig {
    /// A freshly populated bank on empty devices.
    pub fn build(spec: &RigSpec) -> Result<Rig, HarnessError> {
        let bank = Bank::create(spec.scale)?;
        let (log, data, sim_log, sim_data) = devices(spec)?;
        let wal = Wal::create(log.clone(), WalConfig::default())?;
        Ok(Rig { engine: Arc::new(Engine::new(bank, wal)), log, data, sim_log, sim_data })
    }

    /// Recovers the bank held by `spec`'s devices and continues its log.
    pub fn reopen(spec: &RigSpec) -> Result<(Rig, Recovered), HarnessError> {
        let (log, data, sim_log, sim_data) = devices(spec)?;
        let image = data.load_image()?;
        let outcome = recover(&*log, image.as_deref(), &spec.scale)?;
        let summary = Recovered::of(&outcome);
        let wal = Wal::resume(log.clone(), outcome.tail, WalConfig::default())?;
        let engine = Arc::new(Engine::with_next_txn(outcome.bank, wal, outcome.next_txn_id));
        Ok((Rig { engine, log, data, sim_log, sim_data }, summary))
    }

    pub fn config(&self) -> &ScaleConfig {
        self.engine.config()
    }

    pub fn data_ios(&self) -> u64 {
        self.data.ios()
    }

    /// The image currently installed on the data device.
    pub fn installed_image(&self) -> Result<Option<CheckpointImage>, HarnessError> {
        match self.data.load_image()? {
            Some(bytes) => Ok(Some(CheckpointImage::decode(&bytes)?)),
            None => Ok(None),
        }
    }

    /// A checkpointer that continues from the installed image.
    pub fn checkpointer(&self, policy: CheckpointPolicy) -> Result<Arc<Checkpointer>, HarnessError> {
        let image = self.installed_image()?;
        Ok(Arc::new(Checkpointer::resume(self.engine.clone(), self.data.clone(), policy, image)?))
    }
}

type Devices = (Arc<dyn LogDevice>, Arc<dyn DataDevice>, Option<Arc<SimLogDevice>>, Option<Arc<SimDataDevice>>);

fn devices(spec: &RigSpec) -> Result<Devices, HarnessError> {
    let disk = SimDisk::new();
    let shared = |d: &SimDisk| if spec.shared_spindle { d.clone() } else { SimDisk::new() };
    let (log, sim_log): (Arc<dyn LogDevice>, _) = match &spec.log {
        LogSpec::Sim(cfg) => {
            let dev = Arc::new(SimLogDevice::on_disk(*cfg, shared(&disk)));
            (dev.clone(), Some(dev))
        }
        LogSpec::File(path) => (Arc::new(FileLogDevice::open(path)?), None),
    };
    let (data, sim_data): (Arc<dyn DataDevice>, _) = match &spec.data {
        DataSpec::Sim { write_latency } => {
            let dev = Arc::new(SimDataDevice::on_disk(*write_latency, shared(&disk)));
            (dev.clone(), Some(dev))
        }
        DataSpec::File(dir) => (Arc::new(FileDataDevice::open(dir)?), None),
    };
    Ok((log, data, sim_log, sim_data))
}

/// Device layout of a bank directory.
pub fn dir_spec(dir: &Path, scale: ScaleConfig) -> RigSpec {
    RigSpec {
        scale,
        log: LogSpec::File(dir.join(LOG_FILE)),
        data: DataSpec::File(dir.to_path_buf()),
        shared_spindle: false,
    }
}

pub fn read_dir_config(dir: &Path) -> Result<ScaleConfig, HarnessError> {
    let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
    let stored: StoredConfig = serde_json::from_str(&text)?;
    Ok(ScaleConfig::new(stored.branches))
}

/// Populates a bank in `dir` and checkpoints it so the directory holds an
/// image and an empty log.
pub fn init_dir(dir: &Path, branches: u32) -> Result<Rig, HarnessError> {
    fs::create_dir_all(dir)?;
    let path = dir.join(CONFIG_FILE);
    if path.exists() {
        return Err(HarnessError::Plan(format!("{} already holds a bank", dir.display())));
    }
    let scale = ScaleConfig::new(branches);
    scale.validate()?;
    let spec = dir_spec(dir, scale);
    let rig = Rig::build(&spec)?;
    let ckpt = rig.checkpointer(CheckpointPolicy::new(CheckpointMode::Burst, Duration::from_secs(600)))?;
    ckpt.run_checkpoint()?;
    fs::write(&path, serde_json::to_string_pretty(&StoredConfig { branches })?)?;
    Ok(rig)
}

pub fn open_dir(dir: &Path) -> Result<(Rig, Recovered), HarnessError> {
    let scale = read_dir_config(dir)?;
    Rig::reopen(&dir_spec(dir, scale))
}
