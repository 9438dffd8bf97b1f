//! Time sources.
//!
//! Everything that waits or timestamps goes through [`Clock`] so the same code
//! runs against wall time in the daemon and against a [`VirtualClock`] in
//! tests and statistical benchmarks.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

pub trait Clock: Send + Sync {
    /// Nanoseconds since an arbitrary, fixed epoch. Never decreases.
    fn now_ns(&self) -> u64;
}

/// Wall-clock monotonic time.
#[derive(Debug, Default, Clone, Copy)]
pub struct MonotonicClock;

fn process_epoch() -> Instant {
    static EPOCH: OnceLock<Instant> = OnceLock::new();
    *EPOCH.get_or_init(Instant::now)
}

impl Clock for MonotonicClock {
    fn now_ns(&self) -> u64 {
        process_epoch().elapsed().as_nanos() as u64
    }
}

/// Manually advanced clock. Delays charged against it complete instantly.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, ns: u64) -> u64 {
        self.now.fetch_add(ns, Ordering::SeqCst) + ns
    }

    pub fn set(&self, ns: u64) {
        self.now.fetch_max(ns, Ordering::SeqCst);
    }
}

impl Clock for VirtualClock {
    fn now_ns(&self) -> u64 {
        self.now.load(Ordering::SeqCst)
    }
}

/// How simulated delays are realized.
#[derive(Debug, Clone)]
pub enum Timing {
    /// Delays are physically waited out.
    Realtime,
    /// Delays advance a shared virtual clock and return immediately.
    Virtual(Arc<VirtualClock>),
}

impl Default for Timing {
    fn default() -> Self {
        Timing::Realtime
    }
}

// Below this the OS sleep granularity is worse than spinning.
const SPIN_THRESHOLD: Duration = Duration::from_micros(150);

impl Timing {
    pub fn virtual_clock() -> Self {
        Timing::Virtual(Arc::new(VirtualClock::new()))
    }

    pub fn is_virtual(&self) -> bool {
        matches!(self, Timing::Virtual(_))
    }

    pub fn now_ns(&self) -> u64 {
        match self {
            Timing::Realtime => MonotonicClock.now_ns(),
            Timing::Virtual(clock) => clock.now_ns(),
        }
    }

    pub fn delay_ns(&self, ns: u64) {
        if ns == 0 {
            return;
        }
        match self {
            Timing::Virtual(clock) => {
                clock.advance(ns);
            }
            Timing::Realtime => precise_wait(Duration::from_nanos(ns)),
        }
    }

    pub fn clock(&self) -> Arc<dyn Clock> {
        match self {
            Timing::Realtime => Arc::new(MonotonicClock),
            Timing::Virtual(clock) => clock.clone(),
        }
    }
}

/// Sleeps for the bulk of `d` and spins the remainder.
pub fn precise_wait(d: Duration) {
    let deadline = Instant::now() + d;
    if d > SPIN_THRESHOLD {
        std::thread::sleep(d - SPIN_THRESHOLD);
    }
    while Instant::now() < deadline {
        std::hint::spin_loop();
    }
}
