//! Monitoring plugin: sensor and boot checksum supervision, the health
//! query service, and a notification socket for an external monitor.
//!
//! Notifications are text lines `<source> <kind> [message]`. Each is matched
//! against the rule table (first match wins) and the rule's action runs:
//! `log`, `reload` (the target plugin's endpoints) or `degrade` (the target's
//! health). Events no rule matches are only logged.

use std::any::Any;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::time::Duration;

use serde::Deserialize;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::UnixListener;
use tokio::task::JoinHandle;
use tonic::{Request, Response, Status};

use super::{HealthRegistry, HealthStatus};
use crate::hub::{health_to_proto, HubContext, LogChannel, Plugin, PluginArgs, PluginError, ServiceRegistration};
use crate::proto::health_service_server::{HealthService, HealthServiceServer};
use crate::proto::{ComponentHealth, HealthRequest, HealthResponse};
use crate::sim::{ChecksumVerdict, SensorReadings, SimSensors};

pub const REASON_TEMPERATURE: &str = "temperature";
pub const REASON_CHECKSUM: &str = "checksum";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleAction {
    Log,
    Reload,
    Degrade,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default = "wildcard")]
    pub source: String,
    #[serde(default = "wildcard")]
    pub kind: String,
    pub action: RuleAction,
    /// Plugin acted upon; defaults to the event source.
    #[serde(default)]
    pub target: Option<String>,
}

fn wildcard() -> String {
    "*".into()
}

impl Rule {
    pub fn matches(&self, event: &MonitorEvent) -> bool {
        (self.source == "*" || self.source == event.source) && (self.kind == "*" || self.kind == event.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    /// Period of the automatic monitor cycle; 0 disables it.
    pub period_ms: u64,
    pub temperature_max_mc: i64,
    /// Allowed deviation of each rail from its nominal value, in percent.
    pub voltage_tolerance_pct: f64,
    /// Explicit `[min, max]` limits per rail, overriding the tolerance.
    pub voltage_limits_mv: BTreeMap<String, [i64; 2]>,
    pub socket: Option<PathBuf>,
    pub rules: Vec<Rule>,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        Self {
            period_ms: 0,
            temperature_max_mc: 85_000,
            voltage_tolerance_pct: 5.0,
            voltage_limits_mv: BTreeMap::new(),
            socket: None,
            rules: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorReport {
    pub readings: SensorReadings,
    pub checksum: ChecksumVerdict,
    /// Reasons, e.g. `temperature`, `checksum`, `voltage:vccint`, `sensor:vccaux`.
    pub violations: Vec<String>,
    pub status: HealthStatus,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonitorEvent {
    pub source: String,
    pub kind: String,
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MonitorError {
    #[error("unparsable event {0:?}")]
    UnparsableEvent(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventOutcome {
    Logged,
    Reloaded { target: String, generations: Vec<u64> },
    Degraded { target: String },
    ActionFailed { target: String, message: String },
}

impl std::fmt::Display for EventOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EventOutcome::Logged => f.write_str("logged"),
            EventOutcome::Reloaded { target, generations } => write!(f, "reloaded {target} {generations:?}"),
            EventOutcome::Degraded { target } => write!(f, "degraded {target}"),
            EventOutcome::ActionFailed { target, message } => write!(f, "failed {target}: {message}"),
        }
    }
}

fn is_token(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.' | b':'))
}

pub fn parse_event(line: &str) -> Result<MonitorEvent, MonitorError> {
    let bad = || MonitorError::UnparsableEvent(line.to_string());
    let line = line.trim();
    let mut parts = line.splitn(3, char::is_whitespace);
    let source = parts.next().filter(|s| is_token(s)).ok_or_else(bad)?;
    let kind = parts.next().filter(|s| is_token(s)).ok_or_else(bad)?;
    let message = parts.next().map(str::trim).filter(|m| !m.is_empty());
    if message.is_some_and(|m| m.chars().any(char::is_control)) {
        return Err(bad());
    }
    Ok(MonitorEvent { source: source.into(), kind: kind.into(), message: message.map(Into::into) })
}

pub struct MonitorPlugin {
    log: LogChannel,
    ctx: HubContext,
    config: MonitorConfig,
    sensors: Arc<SimSensors>,
    voltage_limits: BTreeMap<String, (i64, i64)>,
    last: Mutex<Option<MonitorReport>>,
    cycles: AtomicU64,
    events: AtomicU64,
    tasks: Mutex<Vec<JoinHandle<()>>>,
    this: Weak<MonitorPlugin>,
}

impl std::fmt::Debug for MonitorPlugin {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MonitorPlugin").field("config", &self.config).finish()
    }
}

impl MonitorPlugin {
    pub fn construct(args: PluginArgs) -> Result<Arc<dyn Plugin>, PluginError> {
        Ok(Self::new(args)?)
    }

    pub fn new(args: PluginArgs) -> Result<Arc<Self>, PluginError> {
        let config: MonitorConfig =
            serde_json::from_value(args.config).map_err(|e| PluginError::new(format_args!("config: {e}")))?;
        if !(config.voltage_tolerance_pct >= 0.0) {
            return Err(PluginError::new("config: voltage_tolerance_pct must be non-negative"));
        }
        let sensors = args.ctx.sim().ok_or_else(|| PluginError::new("no sensor backend"))?.sensors().clone();
        let mut voltage_limits = BTreeMap::new();
        for (rail, &nominal) in &sensors.config().voltages_mv {
            let span = (nominal as f64 * config.voltage_tolerance_pct / 100.0).round() as i64;
            voltage_limits.insert(rail.clone(), (nominal - span, nominal + span));
        }
        for (rail, [lo, hi]) in &config.voltage_limits_mv {
            if !voltage_limits.contains_key(rail) {
                return Err(PluginError::new(format_args!("config: no voltage rail `{rail}`")));
            }
            if lo > hi {
                return Err(PluginError::new(format_args!("config: empty limit range for `{rail}`")));
            }
            voltage_limits.insert(rail.clone(), (*lo, *hi));
        }
        Ok(Arc::new_cyclic(|this| Self {
            log: args.logger,
            ctx: args.ctx,
            config,
            sensors,
            voltage_limits,
            last: Mutex::new(None),
            cycles: AtomicU64::new(0),
            events: AtomicU64::new(0),
            tasks: Mutex::new(Vec::new()),
            this: this.clone(),
        }))
    }

    pub fn config(&self) -> &MonitorConfig {
        &self.config
    }

    pub fn cycles(&self) -> u64 {
        self.cycles.load(Ordering::Relaxed)
    }

    pub fn events_handled(&self) -> u64 {
        self.events.load(Ordering::Relaxed)
    }

    pub fn last_report(&self) -> Option<MonitorReport> {
        self.last.lock().unwrap().clone()
    }

    /// Samples every sensor, verifies the boot image and updates this
    /// plugin's health from the result.
    pub fn monitor_cycle(&self) -> MonitorReport {
        let readings = self.sensors.sample_sensors();
        let checksum = self.sensors.verify_boot_checksum();
        let mut violations = Vec::new();
        match readings.temperature_mc {
            None => violations.push(format!("sensor:{REASON_TEMPERATURE}")),
            Some(t) if t > self.config.temperature_max_mc => violations.push(REASON_TEMPERATURE.into()),
            Some(_) => {}
        }
        for (rail, value) in &readings.voltages_mv {
            match (value, self.voltage_limits.get(rail)) {
                (None, _) => violations.push(format!("sensor:{rail}")),
                (Some(mv), Some((lo, hi))) if mv < lo || mv > hi => violations.push(format!("voltage:{rail}")),
                _ => {}
            }
        }
        if let ChecksumVerdict::Mismatch { stored, actual } = checksum {
            self.log.warn(format_args!("boot image checksum {actual:#010x}, expected {stored:#010x}"));
            violations.push(REASON_CHECKSUM.into());
        }

        let current = self.ctx.health().get(self.ctx.plugin_name()).map(|s| s.status);
        let state = if violations.is_empty() {
            if current == Some(HealthStatus::Degraded) {
                self.log.info("all monitored values back in range");
                self.ctx.report_health(HealthStatus::Healthy, None).ok()
            } else {
                None
            }
        } else if current == Some(HealthStatus::Failed) {
            None
        } else {
            let reason = violations.join(",");
            if current != Some(HealthStatus::Degraded) {
                self.log.warn(format_args!("degraded: {reason}"));
            }
            self.ctx.report_health(HealthStatus::Degraded, Some(&reason)).ok()
        };
        let status = state.map(|s| s.status).or(current).unwrap_or(HealthStatus::Healthy);

        let report = MonitorReport { readings, checksum, violations, status };
        *self.last.lock().unwrap() = Some(report.clone());
        self.cycles.fetch_add(1, Ordering::Relaxed);
        report
    }

    /// Handles one notification line.
    pub fn handle_event(&self, line: &str) -> Result<EventOutcome, MonitorError> {
        let event = match parse_event(line) {
            Ok(event) => event,
            Err(e) => {
                self.log.warn(&e);
                return Err(e);
            }
        };
        self.events.fetch_add(1, Ordering::Relaxed);
        let text = event.message.as_deref().unwrap_or("");
        let Some(rule) = self.config.rules.iter().find(|r| r.matches(&event)) else {
            self.log.info(format_args!("event {} {} {text}", event.source, event.kind));
            return Ok(EventOutcome::Logged);
        };
        let target = rule.target.clone().unwrap_or_else(|| event.source.clone());
        let outcome = match rule.action {
            RuleAction::Log => {
                self.log.info(format_args!("event {} {} {text}", event.source, event.kind));
                EventOutcome::Logged
            }
            RuleAction::Reload => match self.ctx.get_plugin(&target) {
                None => EventOutcome::ActionFailed { target, message: "no such plugin".into() },
                Some(plugin) => match plugin.reload() {
                    Ok(generations) => EventOutcome::Reloaded { target, generations },
                    Err(e) => EventOutcome::ActionFailed { target, message: e.to_string() },
                },
            },
            RuleAction::Degrade => {
                let reason = match &event.message {
                    Some(m) => format!("{}: {m}", event.kind),
                    None => event.kind.clone(),
                };
                match self.ctx.health().report(&target, HealthStatus::Degraded, Some(&reason)) {
                    Ok(_) => EventOutcome::Degraded { target },
                    Err(e) => EventOutcome::ActionFailed { target, message: e.to_string() },
                }
            }
        };
        self.log.info(format_args!("event {} {}: {outcome}", event.source, event.kind));
        Ok(outcome)
    }

    fn spawn_cycle(self: &Arc<Self>, period: Duration) -> JoinHandle<()> {
        let this = Arc::downgrade(self);
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(period);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            loop {
                interval.tick().await;
                let Some(plugin) = this.upgrade() else { break };
                if tokio::task::spawn_blocking(move || plugin.monitor_cycle()).await.is_err() {
                    break;
                }
            }
        })
    }

    fn spawn_listener(self: &Arc<Self>, path: PathBuf) -> std::io::Result<JoinHandle<()>> {
        if path.exists() {
            std::fs::remove_file(&path)?;
        }
        let listener = UnixListener::bind(&path)?;
        self.log.info(format_args!("listening for notifications on {}", path.display()));
        let this = Arc::downgrade(self);
        Ok(tokio::spawn(async move {
            while let Ok((stream, _)) = listener.accept().await {
                let this = this.clone();
                tokio::spawn(async move {
                    let (read, mut write) = stream.into_split();
                    let mut lines = BufReader::new(read).lines();
                    while let Ok(Some(line)) = lines.next_line().await {
                        let Some(plugin) = this.upgrade() else { return };
                        let reply = match tokio::task::spawn_blocking(move || plugin.handle_event(&line)).await {
                            Ok(Ok(outcome)) => format!("ok {outcome}\n"),
                            Ok(Err(e)) => format!("error {e}\n"),
                            Err(_) => return,
                        };
                        if write.write_all(reply.as_bytes()).await.is_err() {
                            return;
                        }
                    }
                });
            }
        }))
    }
}

impl Plugin for MonitorPlugin {
    fn services(&self) -> Vec<ServiceRegistration> {
        let mut server = HealthServiceServer::new(HealthHandler { health: self.ctx.health().clone() });
        if self.ctx.compression() {
            server = server
                .accept_compressed(tonic::codec::CompressionEncoding::Gzip)
                .send_compressed(tonic::codec::CompressionEncoding::Gzip);
        }
        vec![ServiceRegistration::new(server)]
    }

    fn start(&self) {
        let Some(this) = self.this.upgrade() else { return };
        let mut tasks = self.tasks.lock().unwrap();
        if self.config.period_ms > 0 {
            tasks.push(this.spawn_cycle(Duration::from_millis(self.config.period_ms)));
        }
        if let Some(path) = &self.config.socket {
            match this.spawn_listener(path.clone()) {
                Ok(task) => tasks.push(task),
                Err(e) => {
                    self.log.error(format_args!("notification socket {}: {e}", path.display()));
                    let _ = self.ctx.escalate("notification socket unavailable");
                }
            }
        }
    }

    fn shutdown(&self) {
        for task in self.tasks.lock().unwrap().drain(..) {
            task.abort();
        }
        if let Some(path) = &self.config.socket {
            let _ = std::fs::remove_file(path);
        }
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

#[derive(Debug, Clone)]
pub struct HealthHandler {
    health: Arc<HealthRegistry>,
}

impl HealthHandler {
    pub fn new(health: Arc<HealthRegistry>) -> Self {
        Self { health }
    }
}

#[tonic::async_trait]
impl HealthService for HealthHandler {
    async fn get_health(&self, request: Request<HealthRequest>) -> Result<Response<HealthResponse>, Status> {
        let component = request.into_inner().component;
        let states = if component.is_empty() {
            self.health.snapshot()
        } else {
            let state = self
                .health
                .get(&component)
                .ok_or_else(|| Status::not_found(format!("unknown component `{component}`")))?;
            vec![(component, state)]
        };
        let components = states
            .into_iter()
            .map(|(component, s)| ComponentHealth {
                component,
                status: health_to_proto(s.status) as i32,
                reason: s.reason.unwrap_or_default(),
                since_ns: s.since_ns,
            })
            .collect();
        Ok(Response::new(HealthResponse { components }))
    }
}
