use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use indexmap::IndexMap;

use crate::clock::Clock;

/// Exit status of the daemon when the default expiry action fires.
pub const WATCHDOG_EXIT_CODE: i32 = 9;

/// Checker period in realtime mode, also the detection grace.
pub const DEFAULT_TICK: Duration = Duration::from_millis(10);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Expiry {
    pub component: String,
    pub timeout_ns: u64,
    pub last_kick_ns: u64,
    pub detected_ns: u64,
}

pub type ExpiryAction = Arc<dyn Fn(&Expiry) + Send + Sync>;

/// Logs and terminates the process, standing in for the board reset.
pub fn exit_action() -> ExpiryAction {
    Arc::new(|expiry: &Expiry| {
        tracing::error!(
            component = %expiry.component,
            overdue_ns = expiry.detected_ns - expiry.last_kick_ns - expiry.timeout_ns,
            "watchdog expired, exiting"
        );
        std::process::exit(WATCHDOG_EXIT_CODE);
    })
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WatchdogError {
    #[error("unknown watchdog component `{0}`")]
    UnknownComponent(String),
    #[error("watchdog timeout must be positive")]
    ZeroTimeout,
}

#[derive(Debug, Clone)]
struct Registration {
    timeout_ns: u64,
    last_kick_ns: u64,
    fired: bool,
}

/// Software watchdog. A registration expires once `now - last_kick`
/// exceeds its timeout; the action then runs once, and again only after
/// the component has been kicked and starved anew.
pub struct Watchdog {
    clock: Arc<dyn Clock>,
    action: ExpiryAction,
    registrations: Mutex<IndexMap<String, Registration>>,
    fired: AtomicU64,
}

impl fmt::Debug for Watchdog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Watchdog")
            .field("registrations", &*self.lock())
            .field("fired", &self.fired_count())
            .finish()
    }
}

impl Watchdog {
    pub fn new(clock: Arc<dyn Clock>, action: ExpiryAction) -> Self {
        Self { clock, action, registrations: Mutex::new(IndexMap::new()), fired: AtomicU64::new(0) }
    }

    fn lock(&self) -> MutexGuard<'_, IndexMap<String, Registration>> {
        self.registrations.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Registers (or re-registers) `component`; counts as a kick.
    pub fn register(&self, component: &str, timeout_ms: u64) -> Result<(), WatchdogError> {
        if timeout_ms == 0 {
            return Err(WatchdogError::ZeroTimeout);
        }
        let reg = Registration { timeout_ns: timeout_ms * 1_000_000, last_kick_ns: self.clock.now_ns(), fired: false };
        self.lock().insert(component.to_string(), reg);
        Ok(())
    }

    pub fn unregister(&self, component: &str) -> Result<(), WatchdogError> {
        self.lock()
            .shift_remove(component)
            .map(|_| ())
            .ok_or_else(|| WatchdogError::UnknownComponent(component.to_string()))
    }

    pub fn kick(&self, component: &str) -> Result<(), WatchdogError> {
        let now = self.clock.now_ns();
        let mut regs = self.lock();
        let reg = regs
            .get_mut(component)
            .ok_or_else(|| WatchdogError::UnknownComponent(component.to_string()))?;
        reg.last_kick_ns = now;
        reg.fired = false;
        Ok(())
    }

    pub fn components(&self) -> Vec<String> {
        self.lock().keys().cloned().collect()
    }

    /// Number of expiry actions run so far.
    pub fn fired_count(&self) -> u64 {
        self.fired.load(Ordering::Relaxed)
    }

    /// Checks every registration and runs the action for new expiries.
    /// The action runs after the registration lock is released.
    pub fn tick(&self) -> Vec<Expiry> {
        let now = self.clock.now_ns();
        let expired: Vec<Expiry> = self
            .lock()
            .iter_mut()
            .filter(|(_, r)| !r.fired && now.saturating_sub(r.last_kick_ns) > r.timeout_ns)
            .map(|(name, r)| {
                r.fired = true;
                Expiry { component: name.clone(), timeout_ns: r.timeout_ns, last_kick_ns: r.last_kick_ns, detected_ns: now }
            })
            .collect();
        for expiry in &expired {
            self.fired.fetch_add(1, Ordering::Relaxed);
            (self.action)(expiry);
        }
        expired
    }

    /// Runs [`tick`](Self::tick) every `period` on a dedicated thread.
    pub fn spawn_checker(self: &Arc<Self>, period: Duration) -> CheckerHandle {
        let (stop, stopped) = mpsc::channel::<()>();
        let watchdog = self.clone();
        let thread = thread::Builder::new()
            .name("watchdog".into())
            .spawn(move || {
                while let Err(mpsc::RecvTimeoutError::Timeout) = stopped.recv_timeout(period) {
                    watchdog.tick();
                }
            })
            .expect("spawn watchdog thread");
        CheckerHandle { stop: Some(stop), thread: Some(thread) }
    }
}

/// Stops the checker thread when dropped.
#[derive(Debug)]
pub struct CheckerHandle {
    stop: Option<mpsc::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl Drop for CheckerHandle {
    fn drop(&mut self) {
        drop(self.stop.take());
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
