//! Plugin factory contract.
//!
//! A plugin library provides a factory with a construct and a destruct entry
//! point (registered under [`CONSTRUCT_SYMBOL`] and [`DESTRUCT_SYMBOL`]) and
//! reports the contract version it was built against. Factories are bound at
//! build time through a [`PluginCatalog`]; a locator either names a catalog
//! key directly (`builtin:<key>`) or points at a JSON manifest file
//! `{"factory": "<key>"}` found on the search path.

use std::any::Any;
use std::convert::Infallible;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use http::{Request, Response};
use indexmap::IndexMap;
use serde_json::Value;
use tonic::body::BoxBody;
use tonic::server::NamedService;
use tonic::service::RoutesBuilder;
use tower::Service;

use super::context::HubContext;
use super::log::LogChannel;
use crate::reliability::{HealthRegistry, HealthState};

/// Version of the factory contract this hub speaks.
pub const PLUGIN_ABI_VERSION: u32 = 2;
pub const CONSTRUCT_SYMBOL: &str = "servicehub_plugin_construct";
pub const DESTRUCT_SYMBOL: &str = "servicehub_plugin_destruct";
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct PluginError(pub String);

impl PluginError {
    pub fn new(message: impl fmt::Display) -> Self {
        Self(message.to_string())
    }
}

/// One RPC service a plugin wants served.
pub struct ServiceRegistration {
    name: &'static str,
    install: Box<dyn FnOnce(&mut RoutesBuilder) + Send>,
}

impl fmt::Debug for ServiceRegistration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ServiceRegistration").field(&self.name).finish()
    }
}

impl ServiceRegistration {
    pub fn new<S>(service: S) -> Self
    where
        S: Service<Request<BoxBody>, Response = Response<BoxBody>, Error = Infallible>
            + NamedService
            + Clone
            + Send
            + 'static,
        S::Future: Send + 'static,
    {
        Self {
            name: S::NAME,
            install: Box::new(move |routes: &mut RoutesBuilder| {
                routes.add_service(service);
            }),
        }
    }

    /// Fully qualified service name, e.g. `servicehub.v1.RegisterService`.
    pub fn name(&self) -> &'static str {
        self.name
    }

    pub(crate) fn install(self, routes: &mut RoutesBuilder) {
        (self.install)(routes)
    }
}

pub trait Plugin: Send + Sync + 'static {
    /// Services to serve. Called once, right after construction.
    fn services(&self) -> Vec<ServiceRegistration>;

    /// Called on the server runtime before the first request is accepted.
    fn start(&self) {}

    /// Re-establishes the plugin's endpoints; returns their new generations.
    fn reload(&self) -> Result<Vec<u64>, PluginError> {
        Ok(Vec::new())
    }

    /// Called once before the plugin is destroyed.
    fn shutdown(&self) {}

    fn as_any(&self) -> &dyn Any;
}

/// What the hub hands a plugin constructor.
pub struct PluginArgs {
    pub name: String,
    pub config: Value,
    pub logger: LogChannel,
    pub ctx: HubContext,
}

pub trait PluginFactory: Send + Sync {
    fn abi_version(&self) -> u32 {
        PLUGIN_ABI_VERSION
    }

    fn construct(&self, args: PluginArgs) -> Result<Arc<dyn Plugin>, PluginError>;

    fn destruct(&self, plugin: Arc<dyn Plugin>) {
        plugin.shutdown();
    }
}

/// Adapts a closure into a factory.
pub struct FnFactory<F>(pub F);

impl<F> PluginFactory for FnFactory<F>
where
    F: Fn(PluginArgs) -> Result<Arc<dyn Plugin>, PluginError> + Send + Sync,
{
    fn construct(&self, args: PluginArgs) -> Result<Arc<dyn Plugin>, PluginError> {
        (self.0)(args)
    }
}

/// Factories available to the locator, keyed by registration name.
#[derive(Clone, Default)]
pub struct PluginCatalog {
    factories: IndexMap<String, Arc<dyn PluginFactory>>,
}

impl fmt::Debug for PluginCatalog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl PluginCatalog {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The plugins shipped with the daemon.
    pub fn builtin() -> Self {
        let mut catalog = Self::empty();
        crate::services::register_builtins(&mut catalog);
        catalog
    }

    pub fn insert(&mut self, key: &str, factory: Arc<dyn PluginFactory>) -> &mut Self {
        self.factories.insert(key.to_string(), factory);
        self
    }

    pub fn get(&self, key: &str) -> Option<&Arc<dyn PluginFactory>> {
        self.factories.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("plugin `{name}` not found (searched: {})", display_paths(searched))]
    NotFound { name: String, searched: Vec<PathBuf> },
    #[error("plugin `{name}`: bad manifest {path}: {message}")]
    BadManifest { name: String, path: PathBuf, message: String },
    #[error("plugin `{name}`: no factory registered as `{factory}`")]
    UnknownFactory { name: String, factory: String },
    #[error("plugin `{name}` was built for contract version {found}, hub speaks {expected}")]
    AbiMismatch { name: String, expected: u32, found: u32 },
    #[error("plugin `{name}` failed to construct: {message}")]
    ConstructFailed { name: String, message: String },
}

impl LoadError {
    pub fn plugin(&self) -> &str {
        match self {
            LoadError::NotFound { name, .. }
            | LoadError::BadManifest { name, .. }
            | LoadError::UnknownFactory { name, .. }
            | LoadError::AbiMismatch { name, .. }
            | LoadError::ConstructFailed { name, .. } => name,
        }
    }
}

fn display_paths(paths: &[PathBuf]) -> String {
    if paths.is_empty() {
        return "nothing".into();
    }
    paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResolvedLocator {
    Builtin(String),
    Manifest { path: PathBuf, factory: String },
}

impl ResolvedLocator {
    pub fn factory_key(&self) -> &str {
        match self {
            ResolvedLocator::Builtin(key) => key,
            ResolvedLocator::Manifest { factory, .. } => factory,
        }
    }
}

/// Resolves a plugin library locator. Bare file names are looked up in
/// `search_paths` in order and the first hit wins; paths containing a
/// separator are used as given.
pub fn locate_plugin(name: &str, library: &str, search_paths: &[PathBuf]) -> Result<ResolvedLocator, LoadError> {
    if let Some(key) = library.strip_prefix(BUILTIN_PREFIX) {
        return Ok(ResolvedLocator::Builtin(key.to_string()));
    }
    let given = Path::new(library);
    let candidates: Vec<PathBuf> = if given.is_absolute() || given.components().count() > 1 {
        vec![given.to_path_buf()]
    } else {
        search_paths.iter().map(|dir| dir.join(given)).collect()
    };
    let path = candidates
        .iter()
        .find(|p| p.is_file())
        .ok_or_else(|| LoadError::NotFound { name: name.into(), searched: candidates.clone() })?;
    let bad = |message: String| LoadError::BadManifest { name: name.into(), path: path.clone(), message };
    let text = std::fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
    let manifest: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let factory = manifest
        .as_object()
        .filter(|m| m.len() == 1)
        .and_then(|m| m.get("factory"))
        .and_then(Value::as_str)
        .ok_or_else(|| bad("expected {\"factory\": \"<key>\"}".into()))?;
    Ok(ResolvedLocator::Manifest { path: path.clone(), factory: factory.to_string() })
}

/// A constructed plugin.
pub struct PluginHandle {
    pub name: String,
    pub library: String,
    pub config: Value,
    pub logger: LogChannel,
    pub services: Vec<&'static str>,
    plugin: Arc<dyn Plugin>,
    factory: Arc<dyn PluginFactory>,
    health: Arc<HealthRegistry>,
}

impl fmt::Debug for PluginHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PluginHandle")
            .field("name", &self.name)
            .field("library", &self.library)
            .field("services", &self.services)
            .finish()
    }
}

impl PluginHandle {
    pub fn plugin(&self) -> &Arc<dyn Plugin> {
        &self.plugin
    }

    pub fn health(&self) -> Option<HealthState> {
        self.health.get(&self.name)
    }

    pub(crate) fn destroy(&self) {
        self.factory.destruct(self.plugin.clone());
    }
}

/// Checks the contract version, runs the constructor and collects the
/// plugin's services. The handle starts out healthy.
pub fn instantiate_plugin(
    factory: Arc<dyn PluginFactory>,
    args: PluginArgs,
    library: &str,
) -> Result<(PluginHandle, Vec<ServiceRegistration>), LoadError> {
    let name = args.name.clone();
    let found = factory.abi_version();
    if found != PLUGIN_ABI_VERSION {
        return Err(LoadError::AbiMismatch { name, expected: PLUGIN_ABI_VERSION, found });
    }
    let config = args.config.clone();
    let logger = args.logger.clone();
    let health = args.ctx.health().clone();
    let plugin = factory
        .construct(args)
        .map_err(|e| LoadError::ConstructFailed { name: name.clone(), message: e.0 })?;
    let registrations = plugin.services();
    health.register(&name);
    let handle = PluginHandle {
        name,
        library: library.to_string(),
        config,
        logger,
        services: registrations.iter().map(ServiceRegistration::name).collect(),
        plugin,
        factory,
        health,
    };
    Ok((handle, registrations))
}
