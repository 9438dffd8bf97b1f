//! Daemon configuration file (JSON).
//!
//! ```json
//! {
//!   "server": {"listen": "127.0.0.1:50051", "compression": false},
//!   "device_tree": {"source": "sim"},
//!   "watchdog": {"enabled": false, "timeout_ms": 5000},
//!   "backend": {"timing": "realtime"},
//!   "plugins": [{"name": "register", "library": "builtin:register", "config": {}}]
//! }
//! ```
//!
//! Only `plugins` is required. Unknown keys are rejected.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::sim::SimConfig;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:50051";
pub const DEFAULT_WATCHDOG_TIMEOUT_MS: u64 = 5000;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config file {0} not found")]
    FileNotFound(PathBuf),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
}

impl ConfigError {
    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError::Schema { path: path.into(), message: message.into() }
    }

    /// Key path of a schema error.
    pub fn key_path(&self) -> Option<&str> {
        match self {
            ConfigError::Schema { path, .. } => Some(path),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeviceTreeSource {
    Sim,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatchdogConfig {
    pub enabled: bool,
    pub timeout_ms: u64,
}

impl Default for WatchdogConfig {
    fn default() -> Self {
        Self { enabled: false, timeout_ms: DEFAULT_WATCHDOG_TIMEOUT_MS }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PluginRequest {
    pub name: String,
    pub library: String,
    pub config: Value,
}

impl PluginRequest {
    pub fn new(name: &str, library: &str, config: Value) -> Self {
        Self { name: name.into(), library: library.into(), config }
    }

    pub fn builtin(name: &str, key: &str, config: Value) -> Self {
        Self::new(name, &format!("builtin:{key}"), config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HubConfig {
    pub server_listen: SocketAddr,
    pub compression_enabled: bool,
    pub device_tree_source: DeviceTreeSource,
    pub watchdog: WatchdogConfig,
    pub backend: SimConfig,
    pub plugins: Vec<PluginRequest>,
    /// Directory relative paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            server_listen: DEFAULT_LISTEN.parse().unwrap(),
            compression_enabled: false,
            device_tree_source: DeviceTreeSource::Sim,
            watchdog: WatchdogConfig::default(),
            backend: SimConfig::default(),
            plugins: Vec::new(),
            base_dir: None,
        }
    }
}

impl HubConfig {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if path.is_relative() => base.join(path),
            _ => path.to_path_buf(),
        }
    }
}

pub fn load_config(path: &Path) -> Result<HubConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ConfigError::FileNotFound(path.to_path_buf()),
        _ => ConfigError::Io { path: path.to_path_buf(), source: e },
    })?;
    let mut config = parse_config(&text)?;
    config.base_dir = path.parent().map(|p| if p.as_os_str().is_empty() { PathBuf::from(".") } else { p.to_path_buf() });
    if let Some(root) = &config.backend.sysfs_root {
        config.backend.sysfs_root = Some(config.resolve(root));
    }
    Ok(config)
}

pub fn parse_config(text: &str) -> Result<HubConfig, ConfigError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| ConfigError::Parse { line: e.line(), message: e.to_string() })?;
    let root = as_object(&value, "")?;
    check_keys(root, "", &["server", "device_tree", "watchdog", "backend", "plugins"])?;
    let mut config = HubConfig::default();

    if let Some(server) = root.get("server") {
        let server = as_object(server, "server")?;
        check_keys(server, "server", &["listen", "compression"])?;
        if let Some(listen) = server.get("listen") {
            let listen = as_str(listen, "server.listen")?;
            config.server_listen = listen
                .parse()
                .map_err(|_| ConfigError::schema("server.listen", format!("{listen:?} is not a host:port socket address")))?;
        }
        if let Some(c) = server.get("compression") {
            config.compression_enabled = as_bool(c, "server.compression")?;
        }
    }

    if let Some(tree) = root.get("device_tree") {
        let tree = as_object(tree, "device_tree")?;
        check_keys(tree, "device_tree", &["source"])?;
        if let Some(source) = tree.get("source") {
            let source = as_str(source, "device_tree.source")?;
            config.device_tree_source = match source {
                "sim" => DeviceTreeSource::Sim,
                "" => return Err(ConfigError::schema("device_tree.source", "empty path")),
                path => DeviceTreeSource::File(PathBuf::from(path)),
            };
        }
    }

    if let Some(wd) = root.get("watchdog") {
        let wd = as_object(wd, "watchdog")?;
        check_keys(wd, "watchdog", &["enabled", "timeout_ms"])?;
        if let Some(e) = wd.get("enabled") {
            config.watchdog.enabled = as_bool(e, "watchdog.enabled")?;
        }
        if let Some(t) = wd.get("timeout_ms") {
            let t = t
                .as_u64()
                .filter(|t| *t > 0)
                .ok_or_else(|| ConfigError::schema("watchdog.timeout_ms", "expected a positive integer"))?;
            config.watchdog.timeout_ms = t;
        }
    }

    if let Some(backend) = root.get("backend") {
        as_object(backend, "backend")?;
        config.backend =
            serde_json::from_value(backend.clone()).map_err(|e| ConfigError::schema("backend", e.to_string()))?;
        for (key, model) in [
            ("register_latency", &config.backend.register_latency),
            ("endpoint_overhead", &config.backend.endpoint_overhead),
            ("i2c_latency", &config.backend.i2c_latency),
        ] {
            model.validate().map_err(|e| ConfigError::schema(format!("backend.{key}"), e.to_string()))?;
        }
    }

    let plugins = root.get("plugins").ok_or_else(|| ConfigError::schema("plugins", "missing required key"))?;
    let plugins = plugins.as_array().ok_or_else(|| ConfigError::schema("plugins", "expected an array"))?;
    let mut seen = HashSet::new();
    for (i, entry) in plugins.iter().enumerate() {
        let at = format!("plugins[{i}]");
        let obj = as_object(entry, &at)?;
        check_keys(obj, &at, &["name", "library", "config"])?;
        let name_path = format!("{at}.name");
        let name = as_str(obj.get("name").ok_or_else(|| ConfigError::schema(&name_path, "missing required key"))?, &name_path)?;
        if !is_identifier(name) {
            return Err(ConfigError::schema(name_path, format!("{name:?} is not an identifier")));
        }
        if !seen.insert(name) {
            return Err(ConfigError::schema(name_path, format!("duplicate plugin name {name:?}")));
        }
        let lib_path = format!("{at}.library");
        let library = as_str(obj.get("library").ok_or_else(|| ConfigError::schema(&lib_path, "missing required key"))?, &lib_path)?;
        if library.is_empty() {
            return Err(ConfigError::schema(lib_path, "empty locator"));
        }
        let plugin_config = match obj.get("config") {
            None | Some(Value::Null) => Value::Object(Map::new()),
            Some(v @ Value::Object(_)) => v.clone(),
            Some(_) => return Err(ConfigError::schema(format!("{at}.config"), "expected an object")),
        };
        config.plugins.push(PluginRequest { name: name.into(), library: library.into(), config: plugin_config });
    }
    Ok(config)
}

pub fn is_identifier(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, ConfigError> {
    v.as_object().ok_or_else(|| ConfigError::schema(if path.is_empty() { "$" } else { path }, "expected an object"))
}

fn as_str<'a>(v: &'a Value, path: &str) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| ConfigError::schema(path, "expected a string"))
}

fn as_bool(v: &Value, path: &str) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| ConfigError::schema(path, "expected a boolean"))
}

fn check_keys(obj: &Map<String, Value>, path: &str, allowed: &[&str]) -> Result<(), ConfigError> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(key) => Err(ConfigError::schema(join(path, key), format!("unknown key `{key}`"))),
        None => Ok(()),
    }
}
