//! Simulated hardware: AXI register files, an I²C DAC behind a driver
//! attribute tree, board sensors, and fault injection.

mod i2c;
pub mod latency;
mod register_file;
pub mod sensors;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

pub use i2c::{SimI2CDevice, DAC_CHANNELS};
pub use latency::{AccessKind, LatencyModel, LatencyModelError, LatencySource};
pub use register_file::RegisterFile;
pub use sensors::{ChecksumVerdict, SensorConfig, SensorReadings, SimSensors};

use crate::clock::Timing;
use crate::endpoint::{
    match_sysfs, AttributeStore, Backend, BackendError, DeviceNode, FsAttributes, NodeFlavor, RegisterWindow,
};

/// Device tree used when the configuration asks for `"sim"`.
pub const DEFAULT_SIM_TREE: &str = "\
# simulated ZynqMP PL: register benchmark slave behind HPM0, an auxiliary
# slave, and an eight-channel DAC on the PMOD I2C bus
node axi_bench compatible=generic,axi4lite reg=0xa0000000,0x10000
node axi_aux   compatible=generic,axi4lite reg=0xa0010000,0x1000
node dac0      compatible=adi,ad5675r       sysfs=bus/iio/devices
";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FaultMode {
    /// Reads return the values frozen at injection time; writes are lost.
    Stuck,
    /// Every access fails.
    ErrorOnAccess,
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("register file size {0} is not a positive multiple of 4")]
    BadSize(u64),
    #[error("words {first}..{} outside a {words}-word register file", first + count)]
    OutOfRange { first: u64, count: u64, words: u64 },
    #[error("simulated device faulted")]
    Faulted,
    #[error("no DAC channel {0}")]
    NoSuchChannel(u32),
    #[error("no attribute `{0}`")]
    NoSuchAttribute(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("no simulated device `{0}`")]
    UnknownTarget(String),
    #[error(transparent)]
    Latency(#[from] LatencyModelError),
}

impl From<SimError> for BackendError {
    fn from(err: SimError) -> Self {
        match err {
            SimError::Faulted => BackendError::Faulted,
            SimError::OutOfRange { .. } => BackendError::OutOfRange,
            SimError::NoSuchAttribute(name) => BackendError::NoSuchAttribute(name),
            SimError::InvalidInput(msg) => BackendError::Rejected(msg),
            other => BackendError::Unavailable(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimingMode {
    #[default]
    Realtime,
    Virtual,
}

/// The `backend` section of the hub configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub timing: TimingMode,
    pub rng_seed: u64,
    pub init_pattern: u32,
    /// Platform nodes that get a register file; `None` means all of them.
    pub regions: Option<Vec<String>>,
    /// Register file size per label, when it should differ from the tree.
    pub region_sizes: BTreeMap<String, u64>,
    pub register_latency: LatencyModel,
    pub endpoint_overhead: LatencyModel,
    pub i2c_latency: LatencyModel,
    pub sensors: SensorConfig,
    /// Resolve driver-backed nodes against this directory instead of
    /// simulating a DAC for each of them.
    pub sysfs_root: Option<PathBuf>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            timing: TimingMode::Realtime,
            rng_seed: 1,
            init_pattern: 0,
            regions: None,
            region_sizes: BTreeMap::new(),
            register_latency: LatencyModel::register_bus(),
            endpoint_overhead: LatencyModel::endpoint_overhead(),
            i2c_latency: LatencyModel::i2c_bus(),
            sensors: SensorConfig::default(),
            sysfs_root: None,
        }
    }
}

impl SimConfig {
    /// All latency models zeroed: purely functional simulation.
    pub fn functional() -> Self {
        Self {
            register_latency: LatencyModel::zero(),
            endpoint_overhead: LatencyModel::zero(),
            i2c_latency: LatencyModel::zero(),
            ..Self::default()
        }
    }
}

#[derive(Debug)]
struct Region {
    file: Arc<RegisterFile>,
    overhead: Arc<LatencySource>,
}

#[derive(Debug)]
struct SimWindow {
    file: Arc<RegisterFile>,
    overhead: Arc<LatencySource>,
}

impl RegisterWindow for SimWindow {
    fn size(&self) -> u64 {
        self.file.size()
    }

    fn enter(&self, kind: AccessKind) {
        self.overhead.charge(kind, 1);
    }

    fn read_words(&self, first_word: u64, out: &mut [u32]) -> Result<(), BackendError> {
        Ok(self.file.read_burst(first_word, out)?)
    }

    fn write_words(&self, first_word: u64, values: &[u32]) -> Result<(), BackendError> {
        Ok(self.file.write_burst(first_word, values)?)
    }
}

#[derive(Debug)]
struct SimAttributes {
    device: Arc<SimI2CDevice>,
}

impl AttributeStore for SimAttributes {
    fn read_text(&self, name: &str) -> Result<String, BackendError> {
        Ok(self.device.show(name)?)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), BackendError> {
        Ok(self.device.store(name, text)?)
    }
}

/// Backend serving simulated devices for a parsed device tree.
///
/// Register contents survive a remap; an injected fault does not.
#[derive(Debug)]
pub struct SimBackend {
    config: SimConfig,
    timing: Timing,
    regions: BTreeMap<String, Region>,
    dacs: BTreeMap<String, Arc<SimI2CDevice>>,
    sensors: Arc<SimSensors>,
    offline: Mutex<HashSet<String>>,
    map_count: Mutex<BTreeMap<String, u64>>,
}

impl SimBackend {
    pub fn new(config: SimConfig, nodes: &[DeviceNode]) -> Result<Self, SimError> {
        let timing = match config.timing {
            TimingMode::Realtime => Timing::Realtime,
            TimingMode::Virtual => Timing::virtual_clock(),
        };
        Self::with_timing(config, nodes, timing)
    }

    pub fn with_timing(config: SimConfig, nodes: &[DeviceNode], timing: Timing) -> Result<Self, SimError> {
        let mut regions = BTreeMap::new();
        let mut dacs = BTreeMap::new();
        for (idx, node) in nodes.iter().enumerate() {
            let seed_offset = idx as u64;
            match node.flavor() {
                NodeFlavor::Platform => {
                    let wanted = config.regions.as_ref().is_none_or(|r| r.contains(&node.label));
                    if !wanted {
                        continue;
                    }
                    let size = config.region_sizes.get(&node.label).copied().unwrap_or(node.reg_size());
                    let bus = config.register_latency.with_seed(config.register_latency.rng_seed.wrapping_add(seed_offset));
                    let overhead = config.endpoint_overhead.with_seed(config.endpoint_overhead.rng_seed.wrapping_add(seed_offset));
                    let file = RegisterFile::new(size, config.init_pattern, LatencySource::new(bus, timing.clone())?)?;
                    regions.insert(
                        node.label.clone(),
                        Region { file: Arc::new(file), overhead: Arc::new(LatencySource::new(overhead, timing.clone())?) },
                    );
                }
                NodeFlavor::Sysfs => {
                    if config.sysfs_root.is_some() {
                        continue;
                    }
                    let bus = config.i2c_latency.with_seed(config.i2c_latency.rng_seed.wrapping_add(seed_offset));
                    let chip = node.compatible.rsplit(',').next().unwrap_or(&node.compatible);
                    dacs.insert(node.label.clone(), Arc::new(SimI2CDevice::new(chip, LatencySource::new(bus, timing.clone())?)));
                }
            }
        }
        let sensors = Arc::new(SimSensors::new(config.sensors.clone(), config.rng_seed));
        Ok(Self {
            config,
            timing,
            regions,
            dacs,
            sensors,
            offline: Mutex::new(HashSet::new()),
            map_count: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    pub fn sensors(&self) -> &Arc<SimSensors> {
        &self.sensors
    }

    pub fn register_file(&self, label: &str) -> Option<&Arc<RegisterFile>> {
        self.regions.get(label).map(|r| &r.file)
    }

    pub fn i2c_device(&self, label: &str) -> Option<&Arc<SimI2CDevice>> {
        self.dacs.get(label)
    }

    pub fn inject_fault(&self, target: &str, mode: FaultMode) -> Result<(), SimError> {
        if let Some(region) = self.regions.get(target) {
            region.file.inject_fault(mode);
        } else if let Some(dac) = self.dacs.get(target) {
            dac.inject_fault(mode);
        } else {
            return Err(SimError::UnknownTarget(target.to_string()));
        }
        Ok(())
    }

    pub fn clear_fault(&self, target: &str) -> Result<(), SimError> {
        if let Some(region) = self.regions.get(target) {
            region.file.clear_fault();
        } else if let Some(dac) = self.dacs.get(target) {
            dac.clear_fault();
        } else {
            return Err(SimError::UnknownTarget(target.to_string()));
        }
        Ok(())
    }

    /// While offline, mapping the device fails (reload reports the backend
    /// as unavailable).
    pub fn set_offline(&self, target: &str, offline: bool) {
        let mut set = self.offline.lock().unwrap();
        if offline {
            set.insert(target.to_string());
        } else {
            set.remove(target);
        }
    }

    /// How many times the device has been mapped or opened.
    pub fn map_count(&self, target: &str) -> u64 {
        self.map_count.lock().unwrap().get(target).copied().unwrap_or(0)
    }

    fn begin_map(&self, label: &str) -> Result<(), BackendError> {
        if self.offline.lock().unwrap().contains(label) {
            return Err(BackendError::Unavailable(format!("`{label}` is offline")));
        }
        *self.map_count.lock().unwrap().entry(label.to_string()).or_default() += 1;
        Ok(())
    }
}

impl Backend for SimBackend {
    fn map_region(&self, node: &DeviceNode) -> Result<Arc<dyn RegisterWindow>, BackendError> {
        let region = self
            .regions
            .get(&node.label)
            .ok_or_else(|| BackendError::Unavailable(format!("no simulated region for `{}`", node.label)))?;
        self.begin_map(&node.label)?;
        region.file.clear_fault();
        Ok(Arc::new(SimWindow { file: region.file.clone(), overhead: region.overhead.clone() }))
    }

    fn open_attributes(&self, node: &DeviceNode) -> Result<Arc<dyn AttributeStore>, BackendError> {
        if let Some(root) = &self.config.sysfs_root {
            let dir = match_sysfs(node, root)
                .map_err(|e| BackendError::Unavailable(e.to_string()))?
                .ok_or_else(|| BackendError::Unavailable(format!("no driver bound for `{}`", node.label)))?;
            self.begin_map(&node.label)?;
            return Ok(Arc::new(FsAttributes::open(dir)?));
        }
        let device = self
            .dacs
            .get(&node.label)
            .ok_or_else(|| BackendError::Unavailable(format!("no simulated driver for `{}`", node.label)))?;
        self.begin_map(&node.label)?;
        device.clear_fault();
        Ok(Arc::new(SimAttributes { device: device.clone() }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::endpoint::{make_endpoints, parse_device_tree, EndpointError, Width};

    fn backend(config: SimConfig) -> (Vec<DeviceNode>, Arc<SimBackend>) {
        let nodes = parse_device_tree(DEFAULT_SIM_TREE).unwrap();
        let b = Arc::new(SimBackend::new(config, &nodes).unwrap());
        (nodes, b)
    }

    #[test]
    fn default_tree_makes_three_endpoints() {
        let (nodes, b) = backend(SimConfig::functional());
        let dir = make_endpoints(&nodes, b).unwrap();
        assert_eq!(dir.len(), 3);
        assert!(dir.platform("axi_bench").is_some());
        assert!(dir.sysfs("dac0").is_some());
    }

    #[test]
    fn unconfigured_region_unavailable() {
        let config = SimConfig { regions: Some(vec!["axi_bench".into()]), ..SimConfig::functional() };
        let (nodes, b) = backend(config);
        let err = make_endpoints(&nodes, b).unwrap_err();
        assert!(matches!(err, EndpointError::BackendUnavailable { ref label, .. } if label == "axi_aux"), "{err}");
    }

    #[test]
    fn undersized_region_unavailable() {
        let config = SimConfig { region_sizes: [("axi_aux".to_string(), 0x800)].into(), ..SimConfig::functional() };
        let (nodes, b) = backend(config);
        assert!(matches!(make_endpoints(&nodes, b), Err(EndpointError::BackendUnavailable { .. })));
    }

    #[test]
    fn fault_then_reload_recovers() {
        let (nodes, b) = backend(SimConfig::functional());
        let dir = make_endpoints(&nodes, b.clone()).unwrap();
        let ep = dir.platform("axi_bench").unwrap();
        ep.write(0x10, Width::W32, 0x1234).unwrap();
        b.inject_fault("axi_bench", FaultMode::ErrorOnAccess).unwrap();
        assert!(matches!(ep.read(0x10, Width::W32), Err(EndpointError::Faulted(_))));
        assert_eq!(ep.reload().unwrap(), 1);
        assert_eq!(ep.read(0x10, Width::W32).unwrap(), 0x1234);
        assert_eq!(b.map_count("axi_bench"), 2);
    }

    #[test]
    fn stuck_diverges_from_shadow() {
        let (nodes, b) = backend(SimConfig::functional());
        let dir = make_endpoints(&nodes, b.clone()).unwrap();
        let ep = dir.platform("axi_aux").unwrap();
        ep.write(0, Width::W32, 1).unwrap();
        b.inject_fault("axi_aux", FaultMode::Stuck).unwrap();
        ep.write(0, Width::W32, 2).unwrap();
        assert_eq!(ep.read(0, Width::W32).unwrap(), 1);
        b.clear_fault("axi_aux").unwrap();
        ep.write(0, Width::W32, 3).unwrap();
        assert_eq!(ep.read(0, Width::W32).unwrap(), 3);
    }

    #[test]
    fn unknown_fault_target() {
        let (_, b) = backend(SimConfig::functional());
        assert!(matches!(b.inject_fault("nope", FaultMode::Stuck), Err(SimError::UnknownTarget(_))));
        assert!(matches!(b.clear_fault("nope"), Err(SimError::UnknownTarget(_))));
    }

    #[test]
    fn offline_reload_keeps_old_mapping() {
        let (nodes, b) = backend(SimConfig::functional());
        let dir = make_endpoints(&nodes, b.clone()).unwrap();
        let ep = dir.platform("axi_bench").unwrap();
        b.set_offline("axi_bench", true);
        assert!(matches!(ep.reload(), Err(EndpointError::BackendUnavailable { .. })));
        assert_eq!(ep.generation(), 0);
        assert_eq!(ep.read(0, Width::W32).unwrap(), 0);
        b.set_offline("axi_bench", false);
        assert_eq!(ep.reload().unwrap(), 1);
    }

    #[test]
    fn sim_dac_through_sysfs_endpoint() {
        let (nodes, b) = backend(SimConfig::functional());
        let dir = make_endpoints(&nodes, b.clone()).unwrap();
        let dac = dir.sysfs("dac0").unwrap();
        assert_eq!(dac.read("raw0").unwrap(), 0);
        dac.write("raw1", 0x7FFF).unwrap();
        assert_eq!(dac.read("raw1").unwrap(), 0x7FFF);
        assert_eq!(b.i2c_device("dac0").unwrap().i2c_read16(1).unwrap(), 0x7FFF);
        assert!(matches!(dac.read("../escape"), Err(EndpointError::NoSuchAttribute(_))));
        assert!(matches!(dac.write("raw1", 0x1_0000), Err(EndpointError::Rejected { .. })));
    }

    #[test]
    fn sysfs_root_uses_files() {
        let root = tempfile::tempdir().unwrap();
        let dev = root.path().join("bus/iio/devices/iio:device3");
        std::fs::create_dir_all(&dev).unwrap();
        std::fs::write(dev.join("name"), "dac0\n").unwrap();
        std::fs::write(dev.join("raw0"), "17\n").unwrap();
        let config = SimConfig { sysfs_root: Some(root.path().into()), ..SimConfig::functional() };
        let (nodes, b) = backend(config);
        let dir = make_endpoints(&nodes, b).unwrap();
        assert_eq!(dir.sysfs("dac0").unwrap().read("raw0").unwrap(), 17);
    }

    #[test]
    fn timing_is_functionally_transparent() {
        let run = |config: SimConfig| {
            let nodes = parse_device_tree(DEFAULT_SIM_TREE).unwrap();
            let b = Arc::new(SimBackend::with_timing(config, &nodes, Timing::virtual_clock()).unwrap());
            let dir = make_endpoints(&nodes, b).unwrap();
            let ep = dir.platform("axi_bench").unwrap();
            let mut log = Vec::new();
            for i in 0..64u64 {
                ep.write(i * 8, Width::W64, i.wrapping_mul(0x9E37_79B9_7F4A_7C15)).unwrap();
                log.push(ep.read(i * 4, Width::W32).unwrap());
            }
            let dac = dir.sysfs("dac0").unwrap();
            dac.write("raw2", 1234).unwrap();
            log.push(dac.read("raw2").unwrap());
            log
        };
        assert_eq!(run(SimConfig::default()), run(SimConfig::functional()));
    }
}
