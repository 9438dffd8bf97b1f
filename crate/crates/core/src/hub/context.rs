use std::fmt;
use std::sync::{Arc, Mutex, RwLock};

use indexmap::IndexMap;

use super::plugin::{Plugin, PluginHandle};
use crate::clock::Timing;
use crate::endpoint::EndpointDirectory;
use crate::reliability::{HealthError, HealthRegistry, HealthState, HealthStatus, Watchdog};
use crate::sim::SimBackend;

#[derive(Debug, thiserror::Error)]
pub enum ReloadError {
    #[error("unknown plugin `{0}`")]
    UnknownPlugin(String),
    #[error("reload of `{name}` failed: {message}")]
    Failed { name: String, message: String },
}

/// Loaded plugins in load order. Filled once at startup; afterwards only
/// reloads touch it, one at a time.
pub struct Registry {
    plugins: RwLock<IndexMap<String, Arc<PluginHandle>>>,
    health: Arc<HealthRegistry>,
    reload_lock: Mutex<()>,
}

impl fmt::Debug for Registry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.names()).finish()
    }
}

impl Registry {
    pub fn new(health: Arc<HealthRegistry>) -> Self {
        Self { plugins: RwLock::new(IndexMap::new()), health, reload_lock: Mutex::new(()) }
    }

    pub fn get(&self, name: &str) -> Option<Arc<PluginHandle>> {
        self.plugins.read().unwrap().get(name).cloned()
    }

    pub fn names(&self) -> Vec<String> {
        self.plugins.read().unwrap().keys().cloned().collect()
    }

    pub fn handles(&self) -> Vec<Arc<PluginHandle>> {
        self.plugins.read().unwrap().values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.plugins.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn health(&self) -> &Arc<HealthRegistry> {
        &self.health
    }

    pub(crate) fn insert(&self, handle: PluginHandle) -> Arc<PluginHandle> {
        let handle = Arc::new(handle);
        self.plugins.write().unwrap().insert(handle.name.clone(), handle.clone());
        handle
    }

    /// Removes every plugin, newest first.
    pub(crate) fn drain(&self) -> Vec<Arc<PluginHandle>> {
        let mut plugins = self.plugins.write().unwrap();
        let mut handles: Vec<_> = plugins.drain(..).map(|(_, h)| h).collect();
        handles.reverse();
        handles
    }

    /// Reloads a plugin's endpoints. Success makes it healthy again, failure
    /// moves its health one step down.
    pub fn reload(&self, name: &str) -> Result<Vec<u64>, ReloadError> {
        let handle = self.get(name).ok_or_else(|| ReloadError::UnknownPlugin(name.to_string()))?;
        let _serial = self.reload_lock.lock().unwrap_or_else(|p| p.into_inner());
        match handle.plugin().reload() {
            Ok(generations) => {
                let _ = self.health.mark_recovered(name);
                handle.logger.info(format_args!("reloaded, generations {generations:?}"));
                Ok(generations)
            }
            Err(e) => {
                let _ = self.health.escalate(name, &format!("reload failed: {e}"));
                handle.logger.error(format_args!("reload failed: {e}"));
                Err(ReloadError::Failed { name: name.to_string(), message: e.0 })
            }
        }
    }
}

/// Shared daemon resources visible to plugins.
#[derive(Debug, Clone)]
pub struct HubResources {
    pub endpoints: EndpointDirectory,
    pub health: Arc<HealthRegistry>,
    pub sim: Option<Arc<SimBackend>>,
    pub watchdog: Option<Arc<Watchdog>>,
    pub compression: bool,
    pub timing: Timing,
}

/// A plugin's view of the daemon.
#[derive(Clone)]
pub struct HubContext {
    plugin_name: String,
    registry: Arc<Registry>,
    resources: Arc<HubResources>,
}

impl fmt::Debug for HubContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HubContext").field("plugin", &self.plugin_name).finish()
    }
}

impl HubContext {
    pub fn new(plugin_name: &str, registry: Arc<Registry>, resources: Arc<HubResources>) -> Self {
        Self { plugin_name: plugin_name.to_string(), registry, resources }
    }

    /// Name of the plugin this context was handed to.
    pub fn plugin_name(&self) -> &str {
        &self.plugin_name
    }

    /// A loaded plugin by name, including the caller itself when asked for.
    pub fn get_plugin(&self, name: &str) -> Option<PluginRef> {
        self.registry.get(name).map(|handle| PluginRef { handle, registry: self.registry.clone() })
    }

    /// Names of the other loaded plugins.
    pub fn loaded_plugins(&self) -> Vec<String> {
        self.registry.names().into_iter().filter(|n| *n != self.plugin_name).collect()
    }

    pub fn endpoints(&self) -> &EndpointDirectory {
        &self.resources.endpoints
    }

    pub fn health(&self) -> &Arc<HealthRegistry> {
        &self.resources.health
    }

    pub fn sim(&self) -> Option<&Arc<SimBackend>> {
        self.resources.sim.as_ref()
    }

    pub fn watchdog(&self) -> Option<&Arc<Watchdog>> {
        self.resources.watchdog.as_ref()
    }

    pub fn compression(&self) -> bool {
        self.resources.compression
    }

    pub fn timing(&self) -> &Timing {
        &self.resources.timing
    }

    pub fn report_health(&self, status: HealthStatus, reason: Option<&str>) -> Result<HealthState, HealthError> {
        self.resources.health.report(&self.plugin_name, status, reason)
    }

    /// Moves the caller's health one step down.
    pub fn escalate(&self, reason: &str) -> Result<HealthState, HealthError> {
        self.resources.health.escalate(&self.plugin_name, reason)
    }
}

/// Another plugin, as seen through [`HubContext::get_plugin`].
#[derive(Clone)]
pub struct PluginRef {
    handle: Arc<PluginHandle>,
    registry: Arc<Registry>,
}

impl fmt::Debug for PluginRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("PluginRef").field(&self.handle.name).finish()
    }
}

impl PluginRef {
    pub fn name(&self) -> &str {
        &self.handle.name
    }

    pub fn services(&self) -> &[&'static str] {
        &self.handle.services
    }

    pub fn plugin(&self) -> &Arc<dyn Plugin> {
        self.handle.plugin()
    }

    pub fn health(&self) -> Option<HealthState> {
        self.handle.health()
    }

    pub fn downcast<T: 'static>(&self) -> Option<&T> {
        self.handle.plugin().as_any().downcast_ref()
    }

    /// Same path as an admin reload: serialized and health-tracked.
    pub fn reload(&self) -> Result<Vec<u64>, ReloadError> {
        self.registry.reload(&self.handle.name)
    }
}
