use std::fmt;
use std::sync::{Arc, Mutex, MutexGuard};

use super::{Backend, BackendError, BitField, DeviceNode, EndpointError, RegisterWindow, Width};
use crate::sim::AccessKind;

/// Element visiting order for array accesses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessOrder {
    /// One burst transaction over the whole range.
    #[default]
    Sequential,
    /// One transaction per element, even indices first, then odd ones, so
    /// consecutive transactions never touch adjacent addresses.
    Scattered,
}

impl AccessOrder {
    fn visit(self, count: usize) -> Vec<usize> {
        match self {
            AccessOrder::Sequential => (0..count).collect(),
            AccessOrder::Scattered => (0..count).step_by(2).chain((1..count).step_by(2)).collect(),
        }
    }
}

/// Typed access: `ep.read_as::<u16>(0x10)`.
pub trait RegisterValue: Copy {
    const WIDTH: Width;
    fn to_u64(self) -> u64;
    fn from_u64(value: u64) -> Self;
}

macro_rules! register_value {
    ($($t:ty => $w:ident),*) => {$(
        impl RegisterValue for $t {
            const WIDTH: Width = Width::$w;
            fn to_u64(self) -> u64 { self as u64 }
            fn from_u64(value: u64) -> Self { value as $t }
        }
    )*};
}

register_value!(u8 => W8, u16 => W16, u32 => W32, u64 => W64);

struct Mapping {
    window: Arc<dyn RegisterWindow>,
    generation: u64,
}

/// Memory-mapped register window of one device-tree node.
///
/// Accesses to one endpoint are serialized; a reload waits for the access
/// in flight and then swaps the mapping. 64-bit values occupy two 32-bit
/// words, low word first.
pub struct PlatformEndpoint {
    node: DeviceNode,
    size: u64,
    backend: Arc<dyn Backend>,
    mapping: Mutex<Mapping>,
}

impl fmt::Debug for PlatformEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlatformEndpoint")
            .field("label", &self.node.label)
            .field("size", &self.size)
            .field("generation", &self.generation())
            .finish()
    }
}

fn element_span(address: u64, width: Width) -> (u64, usize) {
    (address / 4, (width.bytes() / 4).max(1) as usize)
}

fn extract(words: &[u32], base_word: u64, address: u64, width: Width) -> u64 {
    let wi = (address / 4 - base_word) as usize;
    match width {
        Width::W64 => words[wi] as u64 | (words[wi + 1] as u64) << 32,
        Width::W32 => words[wi] as u64,
        Width::W8 | Width::W16 => (words[wi] >> ((address % 4) * 8)) as u64 & width.max_value(),
    }
}

fn patch(words: &mut [u32], base_word: u64, address: u64, width: Width, value: u64) {
    let wi = (address / 4 - base_word) as usize;
    match width {
        Width::W64 => {
            words[wi] = value as u32;
            words[wi + 1] = (value >> 32) as u32;
        }
        Width::W32 => words[wi] = value as u32,
        Width::W8 | Width::W16 => {
            let shift = (address % 4) * 8;
            let mask = (width.max_value() as u32) << shift;
            words[wi] = (words[wi] & !mask) | ((value as u32) << shift);
        }
    }
}

impl PlatformEndpoint {
    pub fn open(node: DeviceNode, backend: Arc<dyn Backend>) -> Result<Self, EndpointError> {
        let size = node.reg_size();
        let window = Self::map(&node, backend.as_ref())?;
        Ok(Self { node, size, backend, mapping: Mutex::new(Mapping { window, generation: 0 }) })
    }

    fn map(node: &DeviceNode, backend: &dyn Backend) -> Result<Arc<dyn RegisterWindow>, EndpointError> {
        let window = backend.map_region(node).map_err(|e| EndpointError::from_backend(&node.label, e))?;
        if window.size() < node.reg_size() {
            return Err(EndpointError::from_backend(&node.label, BackendError::OutOfRange));
        }
        Ok(window)
    }

    pub fn node(&self) -> &DeviceNode {
        &self.node
    }

    pub fn label(&self) -> &str {
        &self.node.label
    }

    /// Window size in bytes.
    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn generation(&self) -> u64 {
        self.lock().generation
    }

    fn lock(&self) -> MutexGuard<'_, Mapping> {
        self.mapping.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
    }

    fn backend_err(&self, err: BackendError) -> EndpointError {
        EndpointError::from_backend(&self.node.label, err)
    }

    fn check(&self, address: u64, width: Width, count: usize) -> Result<(), EndpointError> {
        if count == 0 {
            return Err(EndpointError::EmptyAccess);
        }
        let bytes = width.bytes().saturating_mul(count as u64);
        match address.checked_add(bytes) {
            Some(end) if end <= self.size => {}
            _ => return Err(EndpointError::OutOfRange { address, bytes, size: self.size }),
        }
        if address % width.bytes() != 0 {
            return Err(EndpointError::Misaligned { address, width: width.bits() });
        }
        Ok(())
    }

    fn check_values(width: Width, values: &[u64]) -> Result<(), EndpointError> {
        match values.iter().find(|&&v| v > width.max_value()) {
            Some(&value) => Err(EndpointError::ValueTooWide { value, bits: width.bits() }),
            None => Ok(()),
        }
    }

    fn read_locked(
        &self,
        window: &dyn RegisterWindow,
        address: u64,
        width: Width,
        count: usize,
        order: AccessOrder,
    ) -> Result<Vec<u64>, EndpointError> {
        let wb = width.bytes();
        match order {
            AccessOrder::Sequential => {
                let first = address / 4;
                let end_word = (address + wb * count as u64).div_ceil(4);
                let mut buf = vec![0u32; (end_word - first) as usize];
                window.read_words(first, &mut buf).map_err(|e| self.backend_err(e))?;
                Ok((0..count as u64).map(|i| extract(&buf, first, address + i * wb, width)).collect())
            }
            AccessOrder::Scattered => {
                let mut out = vec![0u64; count];
                let mut buf = [0u32; 2];
                for i in order.visit(count) {
                    let at = address + i as u64 * wb;
                    let (first, n) = element_span(at, width);
                    window.read_words(first, &mut buf[..n]).map_err(|e| self.backend_err(e))?;
                    out[i] = extract(&buf[..n], first, at, width);
                }
                Ok(out)
            }
        }
    }

    fn write_locked(
        &self,
        window: &dyn RegisterWindow,
        address: u64,
        width: Width,
        values: &[u64],
        order: AccessOrder,
    ) -> Result<(), EndpointError> {
        let wb = width.bytes();
        let whole_words = matches!(width, Width::W32 | Width::W64);
        match order {
            AccessOrder::Sequential => {
                let first = address / 4;
                let end_word = (address + wb * values.len() as u64).div_ceil(4);
                let mut buf = vec![0u32; (end_word - first) as usize];
                if !whole_words {
                    window.read_words(first, &mut buf).map_err(|e| self.backend_err(e))?;
                }
                for (i, &v) in values.iter().enumerate() {
                    patch(&mut buf, first, address + i as u64 * wb, width, v);
                }
                window.write_words(first, &buf).map_err(|e| self.backend_err(e))
            }
            AccessOrder::Scattered => {
                let mut buf = [0u32; 2];
                for i in order.visit(values.len()) {
                    let at = address + i as u64 * wb;
                    let (first, n) = element_span(at, width);
                    if !whole_words {
                        window.read_words(first, &mut buf[..n]).map_err(|e| self.backend_err(e))?;
                    }
                    patch(&mut buf[..n], first, at, width, values[i]);
                    window.write_words(first, &buf[..n]).map_err(|e| self.backend_err(e))?;
                }
                Ok(())
            }
        }
    }

    pub fn read(&self, address: u64, width: Width) -> Result<u64, EndpointError> {
        Ok(self.read_array(address, width, 1, AccessOrder::Sequential)?[0])
    }

    pub fn write(&self, address: u64, width: Width, value: u64) -> Result<(), EndpointError> {
        self.write_array(address, width, &[value], AccessOrder::Sequential)
    }

    pub fn read_as<T: RegisterValue>(&self, address: u64) -> Result<T, EndpointError> {
        self.read(address, T::WIDTH).map(T::from_u64)
    }

    pub fn write_as<T: RegisterValue>(&self, address: u64, value: T) -> Result<(), EndpointError> {
        self.write(address, T::WIDTH, value.to_u64())
    }

    pub fn read_array(&self, address: u64, width: Width, count: usize, order: AccessOrder) -> Result<Vec<u64>, EndpointError> {
        self.check(address, width, count)?;
        let mapping = self.lock();
        mapping.window.enter(AccessKind::Read);
        self.read_locked(mapping.window.as_ref(), address, width, count, order)
    }

    /// All-or-nothing: nothing is written unless the whole range and every
    /// value are valid.
    pub fn write_array(&self, address: u64, width: Width, values: &[u64], order: AccessOrder) -> Result<(), EndpointError> {
        self.check(address, width, values.len())?;
        Self::check_values(width, values)?;
        let mapping = self.lock();
        mapping.window.enter(AccessKind::Write);
        self.write_locked(mapping.window.as_ref(), address, width, values, order)
    }

    /// Write followed by a read-back of the same range, with no other access
    /// to this endpoint in between.
    pub fn write_read_array(&self, address: u64, width: Width, values: &[u64], order: AccessOrder) -> Result<Vec<u64>, EndpointError> {
        self.check(address, width, values.len())?;
        Self::check_values(width, values)?;
        let mapping = self.lock();
        mapping.window.enter(AccessKind::Write);
        self.write_locked(mapping.window.as_ref(), address, width, values, order)?;
        mapping.window.enter(AccessKind::Read);
        self.read_locked(mapping.window.as_ref(), address, width, values.len(), order)
    }

    pub fn read_bits(&self, address: u64, field: BitField) -> Result<u32, EndpointError> {
        self.check(address, Width::W32, 1)?;
        let mapping = self.lock();
        mapping.window.enter(AccessKind::Read);
        let mut word = [0u32];
        mapping.window.read_words(address / 4, &mut word).map_err(|e| self.backend_err(e))?;
        Ok(field.extract(word[0]))
    }

    /// Read-modify-write of one field; bits outside it keep their value.
    pub fn write_bits(&self, address: u64, field: BitField, value: u32) -> Result<(), EndpointError> {
        self.check(address, Width::W32, 1)?;
        field.insert(0, value)?;
        let mapping = self.lock();
        mapping.window.enter(AccessKind::Write);
        let mut word = [0u32];
        mapping.window.read_words(address / 4, &mut word).map_err(|e| self.backend_err(e))?;
        word[0] = field.insert(word[0], value)?;
        mapping.window.write_words(address / 4, &word).map_err(|e| self.backend_err(e))
    }

    /// Re-establishes the backend mapping and bumps the generation. On
    /// failure the previous mapping stays in place.
    pub fn reload(&self) -> Result<u64, EndpointError> {
        let mut mapping = self.lock();
        let window = Self::map(&self.node, self.backend.as_ref())?;
        mapping.window = window;
        mapping.generation += 1;
        Ok(mapping.generation)
    }
}
