//! Health reporting, the software watchdog and the monitoring plugin.

mod health;
pub mod monitor;
mod watchdog;

pub use health::{HealthError, HealthRegistry, HealthState, HealthStatus};
pub use monitor::{
    parse_event, EventOutcome, MonitorConfig, MonitorError, MonitorEvent, MonitorPlugin, MonitorReport, Rule, RuleAction,
};
pub use watchdog::{
    exit_action, CheckerHandle, Expiry, ExpiryAction, Watchdog, WatchdogError, DEFAULT_TICK, WATCHDOG_EXIT_CODE,
};
