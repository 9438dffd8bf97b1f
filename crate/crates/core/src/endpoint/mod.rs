//! Hardware endpoints: one handle per device-tree node.
//!
//! Memory-mapped nodes become a [`PlatformEndpoint`], driver-backed nodes a
//! [`SysfsEndpoint`]. Both talk to the hardware only through a [`Backend`],
//! which hands out register windows and attribute stores and can be asked
//! again on reload.

mod bits;
pub mod device_tree;
mod platform;
mod sysfs;

use std::fmt;
use std::sync::Arc;

use indexmap::IndexMap;

pub use bits::BitField;
pub use device_tree::{match_sysfs, parse_device_tree, DeviceNode, DeviceTreeError, NodeFlavor, RegRange};
pub use platform::{AccessOrder, PlatformEndpoint, RegisterValue};
pub use sysfs::{validate_attribute_name, FsAttributes, SysfsEndpoint};

use crate::sim::AccessKind;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("device faulted")]
    Faulted,
    #[error("access outside the mapped window")]
    OutOfRange,
    #[error("no such attribute `{0}`")]
    NoSuchAttribute(String),
    #[error("driver rejected value: {0}")]
    Rejected(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum EndpointError {
    #[error("{bytes} byte access at {address:#x} exceeds the {size:#x} byte window")]
    OutOfRange { address: u64, bytes: u64, size: u64 },
    #[error("address {address:#x} is not aligned to {width} bits")]
    Misaligned { address: u64, width: u32 },
    #[error("value {value:#x} does not fit in {bits} bits")]
    ValueTooWide { value: u64, bits: u32 },
    #[error("invalid bit field offset {offset} width {width}")]
    InvalidBitField { offset: u8, width: u8 },
    #[error("unsupported access width {0}")]
    InvalidWidth(u32),
    #[error("element count must be at least 1")]
    EmptyAccess,
    #[error("no such attribute `{0}`")]
    NoSuchAttribute(String),
    #[error("attribute `{attribute}` holds undecodable text {text:?}")]
    Decode { attribute: String, text: String },
    #[error("endpoint `{0}` is faulted")]
    Faulted(String),
    #[error("backend unavailable for `{label}`: {reason}")]
    BackendUnavailable { label: String, reason: String },
    #[error("driver of `{label}` rejected the access: {reason}")]
    Rejected { label: String, reason: String },
    #[error("i/o on `{label}`: {source}")]
    Io { label: String, source: std::io::Error },
}

impl EndpointError {
    fn from_backend(label: &str, err: BackendError) -> Self {
        match err {
            BackendError::Unavailable(reason) => EndpointError::BackendUnavailable { label: label.into(), reason },
            BackendError::Faulted => EndpointError::Faulted(label.into()),
            BackendError::OutOfRange => EndpointError::BackendUnavailable {
                label: label.into(),
                reason: "mapped window smaller than the device-tree range".into(),
            },
            BackendError::NoSuchAttribute(name) => EndpointError::NoSuchAttribute(name),
            BackendError::Rejected(reason) => EndpointError::Rejected { label: label.into(), reason },
            BackendError::Io(source) => EndpointError::Io { label: label.into(), source },
        }
    }

    /// True for errors caused by the device rather than by the request.
    pub fn is_device_fault(&self) -> bool {
        matches!(
            self,
            EndpointError::Faulted(_) | EndpointError::BackendUnavailable { .. } | EndpointError::Io { .. }
        )
    }
}

/// A mapped register window.
pub trait RegisterWindow: Send + Sync + fmt::Debug {
    /// Window size in bytes.
    fn size(&self) -> u64;

    /// Called once per endpoint API call, before any bus transaction.
    fn enter(&self, _kind: AccessKind) {}

    /// One read transaction of `out.len()` consecutive 32-bit words.
    fn read_words(&self, first_word: u64, out: &mut [u32]) -> Result<(), BackendError>;

    /// One write transaction of consecutive 32-bit words.
    fn write_words(&self, first_word: u64, values: &[u32]) -> Result<(), BackendError>;
}

/// Textual attribute files of a bound driver.
pub trait AttributeStore: Send + Sync + fmt::Debug {
    fn read_text(&self, name: &str) -> Result<String, BackendError>;
    fn write_text(&self, name: &str, text: &str) -> Result<(), BackendError>;
    fn root(&self) -> Option<&std::path::Path> {
        None
    }
}

pub trait Backend: Send + Sync {
    fn map_region(&self, node: &DeviceNode) -> Result<Arc<dyn RegisterWindow>, BackendError>;
    fn open_attributes(&self, node: &DeviceNode) -> Result<Arc<dyn AttributeStore>, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    W8,
    W16,
    W32,
    W64,
}

impl Width {
    pub fn from_bits(bits: u32) -> Result<Self, EndpointError> {
        match bits {
            8 => Ok(Width::W8),
            16 => Ok(Width::W16),
            32 => Ok(Width::W32),
            64 => Ok(Width::W64),
            other => Err(EndpointError::InvalidWidth(other)),
        }
    }

    pub fn bits(self) -> u32 {
        match self {
            Width::W8 => 8,
            Width::W16 => 16,
            Width::W32 => 32,
            Width::W64 => 64,
        }
    }

    pub fn bytes(self) -> u64 {
        self.bits() as u64 / 8
    }

    pub fn max_value(self) -> u64 {
        if self == Width::W64 {
            u64::MAX
        } else {
            (1u64 << self.bits()) - 1
        }
    }
}

#[derive(Debug, Clone)]
pub enum Endpoint {
    Platform(Arc<PlatformEndpoint>),
    Sysfs(Arc<SysfsEndpoint>),
}

impl Endpoint {
    pub fn node(&self) -> &DeviceNode {
        match self {
            Endpoint::Platform(ep) => ep.node(),
            Endpoint::Sysfs(ep) => ep.node(),
        }
    }

    pub fn label(&self) -> &str {
        &self.node().label
    }

    pub fn flavor(&self) -> NodeFlavor {
        match self {
            Endpoint::Platform(_) => NodeFlavor::Platform,
            Endpoint::Sysfs(_) => NodeFlavor::Sysfs,
        }
    }

    pub fn generation(&self) -> u64 {
        match self {
            Endpoint::Platform(ep) => ep.generation(),
            Endpoint::Sysfs(ep) => ep.generation(),
        }
    }

    pub fn reload(&self) -> Result<u64, EndpointError> {
        match self {
            Endpoint::Platform(ep) => ep.reload(),
            Endpoint::Sysfs(ep) => ep.reload(),
        }
    }

    pub fn as_platform(&self) -> Option<&Arc<PlatformEndpoint>> {
        match self {
            Endpoint::Platform(ep) => Some(ep),
            Endpoint::Sysfs(_) => None,
        }
    }

    pub fn as_sysfs(&self) -> Option<&Arc<SysfsEndpoint>> {
        match self {
            Endpoint::Sysfs(ep) => Some(ep),
            Endpoint::Platform(_) => None,
        }
    }
}

/// Endpoints keyed by label, in device-tree order.
#[derive(Debug, Clone, Default)]
pub struct EndpointDirectory {
    endpoints: IndexMap<String, Endpoint>,
}

impl EndpointDirectory {
    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&Endpoint> {
        self.endpoints.get(label)
    }

    pub fn platform(&self, label: &str) -> Option<&Arc<PlatformEndpoint>> {
        self.get(label).and_then(Endpoint::as_platform)
    }

    pub fn sysfs(&self, label: &str) -> Option<&Arc<SysfsEndpoint>> {
        self.get(label).and_then(Endpoint::as_sysfs)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Endpoint> {
        self.endpoints.values()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.endpoints.keys().map(String::as_str)
    }

    /// Subset with the given labels, keeping directory order.
    pub fn select<'a>(&self, labels: impl IntoIterator<Item = &'a str>) -> Result<Self, String> {
        let wanted: Vec<&str> = labels.into_iter().collect();
        if let Some(missing) = wanted.iter().find(|l| !self.endpoints.contains_key(**l)) {
            return Err(missing.to_string());
        }
        Ok(Self {
            endpoints: self
                .endpoints
                .iter()
                .filter(|(k, _)| wanted.contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        })
    }
}

/// One endpoint per node: platform nodes are mapped, driver-backed nodes
/// get their attribute store opened.
pub fn make_endpoints(nodes: &[DeviceNode], backend: Arc<dyn Backend>) -> Result<EndpointDirectory, EndpointError> {
    let mut endpoints = IndexMap::with_capacity(nodes.len());
    for node in nodes {
        let endpoint = match node.flavor() {
            NodeFlavor::Platform => Endpoint::Platform(Arc::new(PlatformEndpoint::open(node.clone(), backend.clone())?)),
            NodeFlavor::Sysfs => Endpoint::Sysfs(Arc::new(SysfsEndpoint::open(node.clone(), backend.clone())?)),
        };
        endpoints.insert(node.label.clone(), endpoint);
    }
    Ok(EndpointDirectory { endpoints })
}
