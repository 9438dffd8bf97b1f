#![allow(dead_code)]

use std::sync::Arc;

use servicehub::hub::{parse_config, CaptureSink, Hub, HubConfig, HubOptions, RunningHub};
use servicehub::sim::SimConfig;
use tonic::transport::Channel;

/// Parses `json`, listens on an ephemeral port and zeroes all latencies.
pub fn functional_config(json: &str) -> HubConfig {
    let mut config = parse_config(json).expect("test config");
    config.server_listen = "127.0.0.1:0".parse().unwrap();
    config.backend = SimConfig { sysfs_root: config.backend.sysfs_root.clone(), ..SimConfig::functional() };
    config
}

pub fn options(sink: Arc<CaptureSink>) -> HubOptions {
    HubOptions { log_sink: sink, ..HubOptions::default() }
}

pub async fn start(config: HubConfig) -> (RunningHub, Arc<CaptureSink>) {
    let sink = CaptureSink::new();
    let hub = Hub::build(config, options(sink.clone())).expect("hub builds");
    (hub.spawn().await.expect("hub serves"), sink)
}

pub async fn channel(hub: &RunningHub) -> Channel {
    Channel::from_shared(hub.uri()).unwrap().connect().await.expect("connect")
}

pub const REGISTER_AND_STREAM: &str = r#"{"plugins": [
    {"name": "register", "library": "builtin:register"},
    {"name": "stream", "library": "builtin:stream"}
]}"#;

pub const ALL_BUILTINS: &str = r#"{"plugins": [
    {"name": "register", "library": "builtin:register"},
    {"name": "attr", "library": "builtin:attr"},
    {"name": "stream", "library": "builtin:stream"},
    {"name": "monitor", "library": "builtin:monitor"}
]}"#;
