//! Daemon core: configuration, plugin loading, service registration.

mod admin;
pub mod config;
mod context;
pub mod log;
pub mod plugin;
mod server;

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;
use tokio_stream::wrappers::TcpListenerStream;
use tokio_stream::StreamExt;
use tonic::server::NamedService;
use tonic::service::RoutesBuilder;
use tonic::transport::Server;

pub use admin::{health_to_proto, Admin};
pub use config::{load_config, parse_config, ConfigError, DeviceTreeSource, HubConfig, PluginRequest, WatchdogConfig};
pub use context::{HubContext, HubResources, PluginRef, Registry, ReloadError};
pub use log::{CaptureSink, LogChannel, LogRecord, LogSink, TracingSink};
pub use plugin::{
    instantiate_plugin, locate_plugin, FnFactory, LoadError, Plugin, PluginArgs, PluginCatalog, PluginError,
    PluginFactory, PluginHandle, ResolvedLocator, ServiceRegistration, CONSTRUCT_SYMBOL, DESTRUCT_SYMBOL,
    PLUGIN_ABI_VERSION,
};
pub use server::{CallCountLayer, CallCounter};

use crate::clock::{MonotonicClock, Timing};
use crate::endpoint::{make_endpoints, parse_device_tree, DeviceTreeError, EndpointDirectory, EndpointError};
use crate::proto::admin_service_server::AdminServiceServer;
use crate::reliability::{exit_action, ExpiryAction, HealthRegistry, HealthStatus, Watchdog, DEFAULT_TICK};
use crate::sim::{SimBackend, SimError, TimingMode, DEFAULT_SIM_TREE};

/// Health component name of the daemon itself.
pub const HUB_COMPONENT: &str = "hub";

/// How long in-flight calls may finish after shutdown is requested. Idle
/// client connections would otherwise keep the server alive indefinitely.
pub const SHUTDOWN_GRACE: Duration = Duration::from_secs(3);

#[derive(Debug, thiserror::Error)]
pub enum HubError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("device tree {path}: {source}")]
    DeviceTreeRead { path: PathBuf, source: std::io::Error },
    #[error("device tree: {0}")]
    DeviceTree(#[from] DeviceTreeError),
    #[error("simulated backend: {0}")]
    Sim(#[from] SimError),
    #[error("endpoints: {0}")]
    Endpoint(#[from] EndpointError),
    #[error("service `{service}` exported by both `{first}` and `{second}`")]
    DuplicateServiceName { service: String, first: String, second: String },
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("server: {0}")]
    Serve(#[from] tonic::transport::Error),
}

impl HubError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HubError::Bind { .. } => 3,
            HubError::Serve(_) => 1,
            _ => 2,
        }
    }
}

pub struct HubOptions {
    pub search_paths: Vec<PathBuf>,
    pub catalog: PluginCatalog,
    pub log_sink: Arc<dyn LogSink>,
    pub watchdog_action: ExpiryAction,
    /// Overrides the timing mode of the backend configuration.
    pub timing: Option<Timing>,
}

impl Default for HubOptions {
    fn default() -> Self {
        Self {
            search_paths: vec![PathBuf::from(".")],
            catalog: PluginCatalog::builtin(),
            log_sink: Arc::new(TracingSink),
            watchdog_action: exit_action(),
            timing: None,
        }
    }
}

/// A configured daemon whose plugins are constructed but not yet serving.
pub struct Hub {
    config: HubConfig,
    registry: Arc<Registry>,
    resources: Arc<HubResources>,
    sim: Arc<SimBackend>,
    log: LogChannel,
    failures: Vec<LoadError>,
    services: Vec<String>,
    pending: Vec<ServiceRegistration>,
    calls: Arc<CallCounter>,
    started: bool,
}

impl Hub {
    pub fn build(config: HubConfig, options: HubOptions) -> Result<Self, HubError> {
        let log = LogChannel::new(HUB_COMPONENT, options.log_sink.clone());
        let timing = options.timing.clone().unwrap_or_else(|| match config.backend.timing {
            TimingMode::Realtime => Timing::Realtime,
            TimingMode::Virtual => Timing::virtual_clock(),
        });

        let tree = match &config.device_tree_source {
            DeviceTreeSource::Sim => DEFAULT_SIM_TREE.to_string(),
            DeviceTreeSource::File(path) => {
                let path = config.resolve(path);
                std::fs::read_to_string(&path).map_err(|source| HubError::DeviceTreeRead { path, source })?
            }
        };
        let nodes = parse_device_tree(&tree)?;
        let sim = Arc::new(SimBackend::with_timing(config.backend.clone(), &nodes, timing.clone())?);
        let endpoints = make_endpoints(&nodes, sim.clone())?;
        log.info(format_args!("{} endpoints: {:?}", endpoints.len(), endpoints.labels().collect::<Vec<_>>()));

        let health = Arc::new(HealthRegistry::new(Arc::new(MonotonicClock)));
        health.register(HUB_COMPONENT);
        let watchdog = config.watchdog.enabled.then(|| {
            let wd = Arc::new(Watchdog::new(Arc::new(MonotonicClock), options.watchdog_action.clone()));
            wd.register(HUB_COMPONENT, config.watchdog.timeout_ms).expect("timeout validated by config");
            wd
        });
        let resources = Arc::new(HubResources {
            endpoints,
            health: health.clone(),
            sim: Some(sim.clone()),
            watchdog,
            compression: config.compression_enabled,
            timing,
        });
        let registry = Arc::new(Registry::new(health.clone()));

        let mut failures = Vec::new();
        let mut pending = Vec::new();
        let mut owners: Vec<(String, String)> = Vec::new();
        for request in &config.plugins {
            let logger = LogChannel::new(&request.name, options.log_sink.clone());
            let ctx = HubContext::new(&request.name, registry.clone(), resources.clone());
            let args = PluginArgs { name: request.name.clone(), config: request.config.clone(), logger, ctx };
            let loaded = locate_plugin(&request.name, &request.library, &options.search_paths).and_then(|locator| {
                let factory = options.catalog.get(locator.factory_key()).cloned().ok_or_else(|| {
                    LoadError::UnknownFactory { name: request.name.clone(), factory: locator.factory_key().into() }
                })?;
                instantiate_plugin(factory, args, &request.library)
            });
            match loaded {
                Ok((handle, registrations)) => {
                    log.info(format_args!("loaded plugin `{}` serving {:?}", handle.name, handle.services));
                    for r in &registrations {
                        owners.push((r.name().to_string(), handle.name.clone()));
                    }
                    registry.insert(handle);
                    pending.extend(registrations);
                }
                Err(e) => {
                    log.error(&e);
                    failures.push(e);
                }
            }
        }
        if !failures.is_empty() {
            let names: Vec<&str> = failures.iter().map(LoadError::plugin).collect();
            let _ = health.report(HUB_COMPONENT, HealthStatus::Degraded, Some(&format!("plugins failed to load: {}", names.join(", "))));
        }

        owners.push((AdminServiceServer::<Admin>::NAME.to_string(), HUB_COMPONENT.to_string()));
        for (i, (service, owner)) in owners.iter().enumerate() {
            if let Some((_, first)) = owners[..i].iter().find(|(s, _)| s == service) {
                let err = HubError::DuplicateServiceName { service: service.clone(), first: first.clone(), second: owner.clone() };
                log.error(&err);
                for handle in registry.drain() {
                    handle.destroy();
                }
                return Err(err);
            }
        }
        let services = owners.into_iter().map(|(s, _)| s).collect();

        Ok(Self { config, registry, resources, sim, log, failures, services, pending, calls: Arc::default(), started: false })
    }

    pub fn config(&self) -> &HubConfig {
        &self.config
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn health(&self) -> &Arc<HealthRegistry> {
        &self.resources.health
    }

    pub fn endpoints(&self) -> &EndpointDirectory {
        &self.resources.endpoints
    }

    pub fn sim(&self) -> &Arc<SimBackend> {
        &self.sim
    }

    pub fn watchdog(&self) -> Option<&Arc<Watchdog>> {
        self.resources.watchdog.as_ref()
    }

    /// Plugins that could not be loaded, in configuration order.
    pub fn load_failures(&self) -> &[LoadError] {
        &self.failures
    }

    /// Every served service name in registration order, admin last.
    pub fn service_names(&self) -> &[String] {
        &self.services
    }

    pub fn calls(&self) -> &Arc<CallCounter> {
        &self.calls
    }

    /// A context as a plugin named `name` would receive it.
    pub fn context(&self, name: &str) -> HubContext {
        HubContext::new(name, self.registry.clone(), self.resources.clone())
    }

    pub async fn bind(addr: SocketAddr) -> Result<TcpListener, HubError> {
        TcpListener::bind(addr).await.map_err(|source| HubError::Bind { addr, source })
    }

    /// Runs every plugin's `start` hook once, in load order. Must be called
    /// inside a Tokio runtime; `serve` does it when it has not happened yet.
    pub fn start_plugins(&mut self) {
        if std::mem::replace(&mut self.started, true) {
            return;
        }
        for handle in self.registry.handles() {
            handle.plugin().start();
        }
    }

    /// Serves until `shutdown` resolves, then destroys the plugins.
    pub async fn serve(mut self, listener: TcpListener, shutdown: impl Future<Output = ()> + Send) -> Result<(), HubError> {
        self.start_plugins();
        let Hub { registry, resources, log, pending, calls, config, services, .. } = self;

        let mut routes = RoutesBuilder::default();
        for registration in pending {
            registration.install(&mut routes);
        }
        routes.add_service(Admin::new(registry.clone(), services).into_server(config.compression_enabled));

        let watchdog = resources.watchdog.clone().map(|wd| {
            let period = Duration::from_millis((config.watchdog.timeout_ms / 4).max(1));
            let kicker = wd.clone();
            let heartbeat = tokio::spawn(async move {
                let mut interval = tokio::time::interval(period);
                loop {
                    interval.tick().await;
                    let _ = kicker.kick(HUB_COMPONENT);
                }
            });
            (heartbeat, wd.spawn_checker(DEFAULT_TICK))
        });

        if let Ok(addr) = listener.local_addr() {
            log.info(format_args!("serving on {addr}"));
        }
        let incoming = TcpListenerStream::new(listener).map(|conn| {
            if let Ok(stream) = &conn {
                let _ = stream.set_nodelay(true);
            }
            conn
        });
        let (stopping, stopped) = oneshot::channel::<()>();
        let server = Server::builder()
            .layer(CallCountLayer(calls))
            .add_routes(routes.routes())
            .serve_with_incoming_shutdown(incoming, async move {
                shutdown.await;
                let _ = stopping.send(());
            });
        let drain_deadline = async move {
            match stopped.await {
                Ok(()) => tokio::time::sleep(SHUTDOWN_GRACE).await,
                Err(_) => std::future::pending().await,
            }
        };
        let result = tokio::select! {
            result = server => result,
            () = drain_deadline => {
                log.warn(format_args!("connections still open {SHUTDOWN_GRACE:?} after shutdown; closing them"));
                Ok(())
            }
        };

        if let Some((heartbeat, checker)) = watchdog {
            heartbeat.abort();
            drop(checker);
        }
        for handle in registry.drain() {
            handle.destroy();
        }
        log.info("stopped");
        result.map_err(HubError::from)
    }

    /// Binds the configured address, starts the plugins and serves on a
    /// background task.
    pub async fn spawn(mut self) -> Result<RunningHub, HubError> {
        let listener = Self::bind(self.config.server_listen).await?;
        self.start_plugins();
        let addr = listener.local_addr().map_err(|source| HubError::Bind { addr: self.config.server_listen, source })?;
        let registry = self.registry.clone();
        let health = self.resources.health.clone();
        let endpoints = self.resources.endpoints.clone();
        let sim = self.sim.clone();
        let calls = self.calls.clone();
        let services = self.services.clone();
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(self.serve(listener, async {
            let _ = rx.await;
        }));
        Ok(RunningHub {
            addr,
            registry,
            health,
            endpoints,
            sim,
            calls,
            services,
            shutdown: Some(tx),
            task: Some(task),
        })
    }
}

/// A hub serving on a background task.
pub struct RunningHub {
    addr: SocketAddr,
    registry: Arc<Registry>,
    health: Arc<HealthRegistry>,
    endpoints: EndpointDirectory,
    sim: Arc<SimBackend>,
    calls: Arc<CallCounter>,
    services: Vec<String>,
    shutdown: Option<oneshot::Sender<()>>,
    task: Option<JoinHandle<Result<(), HubError>>>,
}

impl RunningHub {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn uri(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    pub fn health(&self) -> &Arc<HealthRegistry> {
        &self.health
    }

    pub fn endpoints(&self) -> &EndpointDirectory {
        &self.endpoints
    }

    pub fn sim(&self) -> &Arc<SimBackend> {
        &self.sim
    }

    pub fn calls(&self) -> &Arc<CallCounter> {
        &self.calls
    }

    pub fn service_names(&self) -> &[String] {
        &self.services
    }

    pub async fn shutdown(mut self) -> Result<(), HubError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        match self.task.take() {
            Some(task) => task.await.expect("hub task panicked"),
            None => Ok(()),
        }
    }
}

impl Drop for RunningHub {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}
