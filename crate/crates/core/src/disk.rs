//! A single-spindle disk model: one FIFO service queue, one request served at
//! a time, each request holding the device for its service time.
//!
//! Requests are admitted without blocking; the caller then waits for the
//! ticket's completion instant. Several submitters that have not yet waited
//! are the "outstanding" queue in front of any later request. Log and data
//! devices built on the same `SimDisk` contend exactly like a log and a
//! database sharing one drive.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use parking_lot::Mutex;

#[derive(Debug, Clone, Copy)]
pub struct IoTicket {
    pub submitted: Instant,
    pub completes: Instant,
}

impl IoTicket {
    /// Ticket for an IO that already finished.
    pub fn done_now() -> IoTicket {
        let now = Instant::now();
        IoTicket { submitted: now, completes: now }
    }

    pub fn response_time(&self) -> Duration {
        self.completes.saturating_duration_since(self.submitted)
    }

    pub fn is_complete(&self, now: Instant) -> bool {
        self.completes <= now
    }

    /// Blocks until the completion instant and returns the response time.
    pub fn wait(&self) -> Duration {
        sleep_until(self.completes);
        self.response_time()
    }
}

pub fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        thread::sleep(deadline - now);
    }
}

#[derive(Default)]
struct DiskState {
    busy_until: Option<Instant>,
}

#[derive(Clone, Default)]
pub struct SimDisk {
    state: Arc<Mutex<DiskState>>,
    requests: Arc<AtomicU64>,
    busy_nanos: Arc<AtomicU64>,
}

impl std::fmt::Debug for SimDisk {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimDisk").field("requests", &self.requests()).finish()
    }
}

impl SimDisk {
    pub fn new() -> Self {
        Self::default()
    }

    /// Enqueues a request needing `service` time on the device.
    pub fn submit(&self, service: Duration) -> IoTicket {
        let now = Instant::now();
        let mut st = self.state.lock();
        let start = match st.busy_until {
            Some(b) if b > now => b,
            _ => now,
        };
        let completes = start + service;
        st.busy_until = Some(completes);
        drop(st);
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.busy_nanos.fetch_add(service.as_nanos() as u64, Ordering::Relaxed);
        IoTicket { submitted: now, completes }
    }

    /// Submit and wait.
    pub fn io(&self, service: Duration) -> Duration {
        self.submit(service).wait()
    }

    /// Work queued ahead of a request submitted now.
    pub fn backlog(&self) -> Duration {
        let now = Instant::now();
        match self.state.lock().busy_until {
            Some(b) => b.saturating_duration_since(now),
            None => Duration::ZERO,
        }
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn busy_time(&self) -> Duration {
        Duration::from_nanos(self.busy_nanos.load(Ordering::Relaxed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requests_queue_in_fifo_order() {
        let disk = SimDisk::new();
        let a = disk.submit(Duration::from_millis(2));
        let b = disk.submit(Duration::from_millis(3));
        assert!(b.completes >= a.completes + Duration::from_millis(3));
        assert!(b.completes - a.submitted >= Duration::from_millis(5));
        assert!(disk.backlog() > Duration::from_millis(4));
        b.wait();
        assert_eq!(disk.backlog(), Duration::ZERO);
        assert_eq!(disk.requests(), 2);
    }

    #[test]
    fn idle_disk_serves_immediately() {
        let disk = SimDisk::new();
        let t = disk.submit(Duration::ZERO);
        assert!(t.is_complete(Instant::now()));
    }
}
