use std::collections::{BTreeMap, VecDeque};
use std::io;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use super::device::DataDevice;
use super::image::{CheckpointImage, ImageError, ImagePage, PageRows};
use super::policy::{recovery_bound, CheckpointMode, CheckpointPolicy, SpreadThrottle};
use crate::disk::{sleep_until, IoTicket};
use crate::engine::{Engine, TableRank, ROWS_PER_PAGE};
use crate::wal::{Lsn, RecordBody, WalError};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("another checkpoint is in progress")]
    Busy,
    #[error("invalid checkpoint policy: {0}")]
    Policy(String),
    #[error("checkpoint log record: {0}")]
    Log(#[from] WalError),
    #[error("data device: {0}")]
    Device(#[from] io::Error),
    #[error("stored image unusable: {0}")]
    Image(#[from] ImageError),
}

/// What one checkpoint did.
#[derive(Debug, Clone)]
pub struct CheckpointEvent {
    pub id: u64,
    pub mode: CheckpointMode,
    pub begin_lsn: Lsn,
    pub end_lsn: Lsn,
    pub started: Instant,
    pub finished: Instant,
    pub pages_written: usize,
    pub image_pages: usize,
    /// Log records a crash just before the install would have replayed.
    pub replay_records_at_install: u64,
    pub max_response: Duration,
    pub error: Option<String>,
}

type PageKey = (TableRank, u64);

struct Installed {
    pages: BTreeMap<PageKey, ImagePage>,
    begin_lsn: Lsn,
    end_lsn: Lsn,
    history_rows: usize,
}

type Probe = Box<dyn Fn() + Send + Sync>;

/// Fuzzy checkpoints of one engine onto one data device.
///
/// `checkpoint_begin` is logged while transactions are briefly kept from
/// logging, so every record below it is already applied in memory. The
/// pages dirty at that instant are then captured one at a time under their
/// row locks and written while transactions run. Each new image is the
/// previous image overlaid with the captured pages.
pub struct Checkpointer {
    engine: Arc<Engine>,
    device: Arc<dyn DataDevice>,
    policy: CheckpointPolicy,
    token: Mutex<()>,
    installed: Mutex<Installed>,
    installed_begin: AtomicU64,
    next_id: AtomicU64,
    active: AtomicBool,
    events: Mutex<Vec<CheckpointEvent>>,
    install_probe: RwLock<Option<Probe>>,
}

impl Checkpointer {
    pub fn new(
        engine: Arc<Engine>,
        device: Arc<dyn DataDevice>,
        policy: CheckpointPolicy,
    ) -> Result<Self, CheckpointError> {
        Self::resume(engine, device, policy, None)
    }

    /// Continues from the image recovery started from, so later images keep
    /// the pages it holds.
    pub fn resume(
        engine: Arc<Engine>,
        device: Arc<dyn DataDevice>,
        policy: CheckpointPolicy,
        image: Option<CheckpointImage>,
    ) -> Result<Self, CheckpointError> {
        policy.validate().map_err(CheckpointError::Policy)?;
        let mut installed =
            Installed { pages: BTreeMap::new(), begin_lsn: 0, end_lsn: 0, history_rows: 0 };
        if let Some(img) = image {
            installed.begin_lsn = img.begin_lsn;
            installed.end_lsn = img.end_lsn;
            for page in img.pages {
                if let PageRows::History(rows) = &page.rows {
                    installed.history_rows = installed
                        .history_rows
                        .max(page.first_key as usize + rows.len());
                }
                installed.pages.insert((page.table, page.first_key), page);
            }
        }
        Ok(Checkpointer {
            installed_begin: AtomicU64::new(installed.begin_lsn),
            installed: Mutex::new(installed),
            engine,
            device,
            policy,
            token: Mutex::new(()),
            next_id: AtomicU64::new(1),
            active: AtomicBool::new(false),
            events: Mutex::new(Vec::new()),
            install_probe: RwLock::new(None),
        })
    }

    pub fn policy(&self) -> &CheckpointPolicy {
        &self.policy
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.engine
    }

    pub fn device(&self) -> &Arc<dyn DataDevice> {
        &self.device
    }

    /// `checkpoint_begin` lsn of the installed image, 0 when there is none.
    pub fn installed_begin(&self) -> Lsn {
        self.installed_begin.load(Ordering::Acquire)
    }

    pub fn is_active(&self) -> bool {
        self.active.load(Ordering::Acquire)
    }

    pub fn events(&self) -> Vec<CheckpointEvent> {
        self.events.lock().clone()
    }

    /// Runs `probe` right before each image install, the latest instant a
    /// crash still recovers from the previous image.
    pub fn set_install_probe(&self, probe: impl Fn() + Send + Sync + 'static) {
        *self.install_probe.write() = Some(Box::new(probe));
    }

    /// Estimated replay time if the engine crashed now.
    pub fn recovery_estimate(&self) -> Duration {
        recovery_bound(self.engine.wal().last_lsn(), self.installed_begin(), self.policy.replay_rate)
    }

    pub fn run_checkpoint(&self) -> Result<CheckpointImage, CheckpointError> {
        let _token = self.token.try_lock().ok_or(CheckpointError::Busy)?;
        self.active.store(true, Ordering::Release);
        let started = Instant::now();
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let mut event = CheckpointEvent {
            id,
            mode: self.policy.mode,
            begin_lsn: 0,
            end_lsn: 0,
            started,
            finished: started,
            pages_written: 0,
            image_pages: 0,
            replay_records_at_install: 0,
            max_response: Duration::ZERO,
            error: None,
        };
        let mut captured = Vec::new();
        let result = self.checkpoint(id, &mut event, &mut captured);
        if let Err(e) = &result {
            let bank = self.engine.bank();
            for page in &captured {
                if page.table != TableRank::History {
                    let idx = bank.index_of(page.table, page.first_key).unwrap_or(0);
                    bank.table(page.table).dirty().mark(idx / ROWS_PER_PAGE);
                }
            }
            event.error = Some(e.to_string());
        }
        event.finished = Instant::now();
        self.events.lock().push(event);
        self.active.store(false, Ordering::Release);
        result
    }

    fn checkpoint(
        &self,
        id: u64,
        event: &mut CheckpointEvent,
        captured: &mut Vec<ImagePage>,
    ) -> Result<CheckpointImage, CheckpointError> {
        let engine = &*self.engine;
        let bank = engine.bank();
        let wal = engine.wal();
        let txn_id = engine.allocate_txn_id();

        let (begin, work, history_len) = {
            let _gate = engine.exclude_appliers();
            let begin = wal.append(txn_id, RecordBody::CheckpointBegin { checkpoint_id: id })?;
            let mut work = Vec::new();
            for rank in TableRank::BALANCE_TABLES {
                work.extend(bank.table(rank).dirty().dirty_pages().into_iter().map(|p| (rank, p)));
            }
            (begin, work, bank.history_len())
        };
        event.begin_lsn = begin;

        let history_from = self.installed.lock().history_rows / ROWS_PER_PAGE;
        let history_pages = history_from..history_len.div_ceil(ROWS_PER_PAGE);
        let work: Vec<(TableRank, usize)> = work
            .into_iter()
            .chain(history_pages.map(|p| (TableRank::History, p)))
            .collect();

        let mut io = IoWindow::new(match self.policy.mode {
            CheckpointMode::Burst => self.policy.burst_depth,
            CheckpointMode::Spread => self.policy.throttle.initial_outstanding,
        });
        let throttle = (self.policy.mode == CheckpointMode::Spread).then_some(self.policy.throttle);
        let deadline = event.started + self.policy.spread_window();
        let mut quantum = Duration::ZERO;
        let mut recompute_at = Instant::now();
        let mut next_issue = Instant::now();

        for (i, &(rank, page)) in work.iter().enumerate() {
            if let Some(t) = &throttle {
                let now = Instant::now();
                if now >= recompute_at {
                    let left = (work.len() - i) as u32;
                    quantum = deadline.saturating_duration_since(now) / left;
                    recompute_at = now + Duration::from_secs(1);
                }
                sleep_until(next_issue);
                io.reap(Instant::now(), Some(t));
            }
            io.wait_for_slot(throttle.as_ref());
            let image_page = self.capture(rank, page, history_len);
            let bytes = image_page.encode();
            captured.push(image_page);
            let ticket = self.device.write_page(&bytes)?;
            io.outstanding.push_back(ticket);
            event.pages_written += 1;
            if throttle.is_some() {
                next_issue = (next_issue + quantum).max(Instant::now());
            }
        }
        io.drain(throttle.as_ref());
        event.max_response = io.max_response;

        let end = wal.append(
            txn_id,
            RecordBody::CheckpointEnd {
                checkpoint_id: id,
                begin_lsn: begin,
                page_count: captured.len() as u32,
            },
        )?;
        // Captured pages may hold updates whose commit is not yet durable.
        wal.force_to(end)?;
        event.end_lsn = end;

        let mut pages = self.installed.lock().pages.clone();
        for page in captured.iter() {
            pages.insert((page.table, page.first_key), page.clone());
        }
        let image = CheckpointImage { begin_lsn: begin, end_lsn: end, pages: pages.values().cloned().collect() };
        let bytes = image.encode();
        event.image_pages = image.pages.len();
        event.replay_records_at_install = wal.last_lsn().saturating_sub(self.installed_begin());
        if let Some(probe) = &*self.install_probe.read() {
            probe();
        }
        self.device.install_image(&bytes)?;

        let mut installed = self.installed.lock();
        *installed = Installed { pages, begin_lsn: begin, end_lsn: end, history_rows: history_len };
        self.installed_begin.store(begin, Ordering::Release);
        Ok(image)
    }

    fn capture(&self, rank: TableRank, page: usize, history_len: usize) -> ImagePage {
        let bank = self.engine.bank();
        if rank == TableRank::History {
            let start = page * ROWS_PER_PAGE;
            let end = (start + ROWS_PER_PAGE).min(history_len);
            let rows = bank.history_entries(start, end);
            let page_lsn = rows.iter().map(|e| e.lsn).max().unwrap_or(0);
            return ImagePage { table: rank, first_key: start as u64, page_lsn, rows: PageRows::History(rows) };
        }
        let table = bank.table(rank);
        let (rows, page_lsn) = table.capture_page(page);
        let first_key = bank.id_at(rank, page * ROWS_PER_PAGE);
        ImagePage { table: rank, first_key, page_lsn, rows: PageRows::Balances(rows) }
    }
}

struct IoWindow {
    outstanding: VecDeque<IoTicket>,
    limit: usize,
    baseline: Option<f64>,
    ok_streak: usize,
    max_response: Duration,
}

impl IoWindow {
    fn new(limit: usize) -> Self {
        IoWindow {
            outstanding: VecDeque::new(),
            limit: limit.max(1),
            baseline: None,
            ok_streak: 0,
            max_response: Duration::ZERO,
        }
    }

    fn observe(&mut self, rt: Duration, throttle: Option<&SpreadThrottle>) {
        self.max_response = self.max_response.max(rt);
        let Some(t) = throttle else { return };
        let secs = rt.as_secs_f64();
        match self.baseline {
            None => self.baseline = Some(secs),
            Some(base) => {
                if secs > t.slowdown * base {
                    self.limit = (self.limit / 2).max(1);
                    self.ok_streak = 0;
                } else {
                    self.ok_streak += 1;
                    if self.ok_streak >= self.limit {
                        self.limit = (self.limit + 1).min(t.max_outstanding);
                        self.ok_streak = 0;
                    }
                }
                self.baseline = Some(base + t.baseline_alpha * (secs - base));
            }
        }
    }

    fn reap(&mut self, now: Instant, throttle: Option<&SpreadThrottle>) {
        while let Some(t) = self.outstanding.front().copied() {
            if !t.is_complete(now) {
                break;
            }
            self.outstanding.pop_front();
            self.observe(t.response_time(), throttle);
        }
    }

    fn wait_for_slot(&mut self, throttle: Option<&SpreadThrottle>) {
        while self.outstanding.len() >= self.limit {
            let t = self.outstanding.pop_front().expect("window is non-empty");
            self.observe(t.wait(), throttle);
        }
    }

    fn drain(&mut self, throttle: Option<&SpreadThrottle>) {
        while let Some(t) = self.outstanding.pop_front() {
            self.observe(t.wait(), throttle);
        }
    }
}

/// Background thread that checkpoints whenever the recovery estimate
/// exceeds the policy's recovery interval.
pub struct Scheduler {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Vec<CheckpointError>>>,
}

impl Scheduler {
    pub fn spawn(checkpointer: Arc<Checkpointer>) -> Scheduler {
        let stop = Arc::new(AtomicBool::new(false));
        let tick = (checkpointer.policy.recovery_interval / 50).clamp(Duration::from_millis(5), Duration::from_millis(100));
        let flag = stop.clone();
        let handle = thread::spawn(move || {
            let mut errors = Vec::new();
            while !flag.load(Ordering::Acquire) {
                if checkpointer.recovery_estimate() >= checkpointer.policy.recovery_interval {
                    match checkpointer.run_checkpoint() {
                        Ok(_) | Err(CheckpointError::Busy) => {}
                        Err(e) => {
                            let halted = matches!(e, CheckpointError::Log(_));
                            errors.push(e);
                            if halted {
                                break;
                            }
                        }
                    }
                }
                thread::sleep(tick);
            }
            errors
        });
        Scheduler { stop, handle: Some(handle) }
    }

    /// Stops the thread and returns the checkpoint failures it saw.
    pub fn stop(mut self) -> Vec<CheckpointError> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Vec<CheckpointError> {
        self.stop.store(true, Ordering::Release);
        self.handle.take().map(|h| h.join().unwrap_or_default()).unwrap_or_default()
    }
}

impl Drop for Scheduler {
    fn drop(&mut self) {
        self.shutdown();
    }
}
