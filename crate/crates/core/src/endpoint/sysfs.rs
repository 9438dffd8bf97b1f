use std::fmt;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use super::{AttributeStore, Backend, BackendError, DeviceNode, EndpointError};

/// Attribute names are single path components: no separators, no `.`/`..`.
pub fn validate_attribute_name(name: &str) -> Result<(), EndpointError> {
    let bad = name.is_empty()
        || name == "."
        || name == ".."
        || name.bytes().any(|b| matches!(b, b'/' | b'\\' | 0));
    if bad {
        Err(EndpointError::NoSuchAttribute(name.to_string()))
    } else {
        Ok(())
    }
}

/// Attribute files of a real (or fixture) sysfs directory.
#[derive(Debug, Clone)]
pub struct FsAttributes {
    root: PathBuf,
}

impl FsAttributes {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = fs::canonicalize(root)?;
        if !root.is_dir() {
            return Err(io::Error::new(io::ErrorKind::NotADirectory, root.display().to_string()));
        }
        Ok(Self { root })
    }

    fn resolve(&self, name: &str) -> Result<PathBuf, BackendError> {
        let missing = || BackendError::NoSuchAttribute(name.to_string());
        if validate_attribute_name(name).is_err() {
            return Err(missing());
        }
        // Follows symlinks, so a link pointing out of the root is rejected too.
        let path = fs::canonicalize(self.root.join(name)).map_err(|_| missing())?;
        if !path.starts_with(&self.root) || !path.is_file() {
            return Err(missing());
        }
        Ok(path)
    }
}

impl AttributeStore for FsAttributes {
    fn read_text(&self, name: &str) -> Result<String, BackendError> {
        Ok(fs::read_to_string(self.resolve(name)?)?)
    }

    fn write_text(&self, name: &str, text: &str) -> Result<(), BackendError> {
        let path = self.resolve(name)?;
        let mut file = OpenOptions::new().write(true).truncate(true).open(path)?;
        file.write_all(text.as_bytes()).map_err(|e| match e.kind() {
            io::ErrorKind::InvalidInput => BackendError::Rejected(e.to_string()),
            _ => BackendError::Io(e),
        })
    }

    fn root(&self) -> Option<&Path> {
        Some(&self.root)
    }
}

struct Binding {
    store: Arc<dyn AttributeStore>,
    generation: u64,
}

/// Driver-backed endpoint. Values cross the attribute files as decimal
/// text with a trailing newline.
pub struct SysfsEndpoint {
    node: DeviceNode,
    backend: Arc<dyn Backend>,
    binding: Mutex<Binding>,
}

impl fmt::Debug for SysfsEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SysfsEndpoint")
            .field("label", &self.node.label)
            .field("attribute_root", &self.attribute_root())
            .field("generation", &self.generation())
            .finish()
    }
}

impl SysfsEndpoint {
    pub fn open(node: DeviceNode, backend: Arc<dyn Backend>) -> Result<Self, EndpointError> {
        let store = backend
            .open_attributes(&node)
            .map_err(|e| EndpointError::from_backend(&node.label, e))?;
        Ok(Self { node, backend, binding: Mutex::new(Binding { store, generation: 0 }) })
    }

    pub fn node(&self) -> &DeviceNode {
        &self.node
    }

    pub fn label(&self) -> &str {
        &self.node.label
    }

    pub fn attribute_root(&self) -> Option<PathBuf> {
        self.lock().store.root().map(Path::to_path_buf)
    }

    pub fn generation(&self) -> u64 {
        self.lock().generation
    }

    fn lock(&self) -> MutexGuard<'_, Binding> {
        self.binding.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn decode(attribute: &str, text: String) -> Result<u64, EndpointError> {
        let trimmed = text.strip_suffix('\n').unwrap_or(&text);
        trimmed
            .parse()
            .map_err(|_| EndpointError::Decode { attribute: attribute.to_string(), text })
    }

    fn read_locked(&self, store: &dyn AttributeStore, attribute: &str) -> Result<u64, EndpointError> {
        let text = store
            .read_text(attribute)
            .map_err(|e| EndpointError::from_backend(&self.node.label, e))?;
        Self::decode(attribute, text)
    }

    fn write_locked(&self, store: &dyn AttributeStore, attribute: &str, value: u64) -> Result<(), EndpointError> {
        store
            .write_text(attribute, &format!("{value}\n"))
            .map_err(|e| EndpointError::from_backend(&self.node.label, e))
    }

    pub fn read(&self, attribute: &str) -> Result<u64, EndpointError> {
        validate_attribute_name(attribute)?;
        let binding = self.lock();
        self.read_locked(binding.store.as_ref(), attribute)
    }

    pub fn write(&self, attribute: &str, value: u64) -> Result<(), EndpointError> {
        validate_attribute_name(attribute)?;
        let binding = self.lock();
        self.write_locked(binding.store.as_ref(), attribute, value)
    }

    /// Write and read back one attribute without interleaving.
    pub fn write_read(&self, attribute: &str, value: u64) -> Result<u64, EndpointError> {
        validate_attribute_name(attribute)?;
        let binding = self.lock();
        self.write_locked(binding.store.as_ref(), attribute, value)?;
        self.read_locked(binding.store.as_ref(), attribute)
    }

    pub fn reload(&self) -> Result<u64, EndpointError> {
        let mut binding = self.lock();
        binding.store = self
            .backend
            .open_attributes(&self.node)
            .map_err(|e| EndpointError::from_backend(&self.node.label, e))?;
        binding.generation += 1;
        Ok(binding.generation)
    }
}
