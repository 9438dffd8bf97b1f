use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use indexmap::IndexMap;

use crate::clock::Clock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HealthStatus {
    Healthy,
    Degraded,
    Failed,
}

impl HealthStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            HealthStatus::Healthy => "healthy",
            HealthStatus::Degraded => "degraded",
            HealthStatus::Failed => "failed",
        }
    }

    /// Transitions a component may report itself. Leaving `Failed` needs a
    /// successful reload and goes through [`HealthRegistry::mark_recovered`].
    pub fn can_report(self, to: HealthStatus) -> bool {
        use HealthStatus::*;
        matches!((self, to), (Healthy, Degraded) | (Degraded, Healthy) | (Degraded, Failed))
    }

    /// One step worse; `Failed` stays `Failed`.
    pub fn escalated(self) -> HealthStatus {
        match self {
            HealthStatus::Healthy => HealthStatus::Degraded,
            _ => HealthStatus::Failed,
        }
    }
}

impl fmt::Display for HealthStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HealthState {
    pub status: HealthStatus,
    pub reason: Option<String>,
    pub since_ns: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HealthError {
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
    #[error("`{component}` cannot go from {from} to {to}")]
    IllegalTransition { component: String, from: HealthStatus, to: HealthStatus },
}

/// Health of every registered component, in registration order.
pub struct HealthRegistry {
    clock: Arc<dyn Clock>,
    states: Mutex<IndexMap<String, HealthState>>,
}

impl fmt::Debug for HealthRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HealthRegistry").field("states", &*self.lock()).finish()
    }
}

impl HealthRegistry {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { clock, states: Mutex::new(IndexMap::new()) }
    }

    fn lock(&self) -> MutexGuard<'_, IndexMap<String, HealthState>> {
        self.states.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Registers `component` as healthy. Registering again resets it.
    pub fn register(&self, component: &str) {
        let now = self.clock.now_ns();
        let mut states = self.lock();
        let since_ns = match states.get(component) {
            Some(prev) => now.max(prev.since_ns + 1),
            None => now,
        };
        states.insert(component.to_string(), HealthState { status: HealthStatus::Healthy, reason: None, since_ns });
    }

    pub fn unregister(&self, component: &str) -> bool {
        self.lock().shift_remove(component).is_some()
    }

    pub fn get(&self, component: &str) -> Option<HealthState> {
        self.lock().get(component).cloned()
    }

    pub fn snapshot(&self) -> Vec<(String, HealthState)> {
        self.lock().iter().map(|(k, v)| (k.clone(), v.clone())).collect()
    }

    fn apply(
        &self,
        component: &str,
        reason: Option<String>,
        next: impl FnOnce(HealthStatus) -> Result<HealthStatus, HealthError>,
    ) -> Result<HealthState, HealthError> {
        let now = self.clock.now_ns();
        let mut states = self.lock();
        let state = states
            .get_mut(component)
            .ok_or_else(|| HealthError::UnknownComponent(component.to_string()))?;
        let to = next(state.status)?;
        if to == state.status {
            // Same status: refresh the reason, not a transition.
            if reason.is_some() {
                state.reason = reason;
            }
            return Ok(state.clone());
        }
        state.status = to;
        state.reason = reason;
        state.since_ns = now.max(state.since_ns + 1);
        Ok(state.clone())
    }

    pub fn report(&self, component: &str, to: HealthStatus, reason: Option<&str>) -> Result<HealthState, HealthError> {
        self.apply(component, reason.map(str::to_string), |from| {
            if from == to || from.can_report(to) {
                Ok(to)
            } else {
                Err(HealthError::IllegalTransition { component: component.to_string(), from, to })
            }
        })
    }

    /// Moves one step towards `Failed`.
    pub fn escalate(&self, component: &str, reason: &str) -> Result<HealthState, HealthError> {
        self.apply(component, Some(reason.to_string()), |from| Ok(from.escalated()))
    }

    /// Back to `Healthy` after a successful reload, from any state.
    pub fn mark_recovered(&self, component: &str) -> Result<HealthState, HealthError> {
        self.apply(component, None, |_| Ok(HealthStatus::Healthy))
    }

    pub fn worst(&self) -> HealthStatus {
        self.lock().values().map(|s| s.status).max().unwrap_or(HealthStatus::Healthy)
    }
}
