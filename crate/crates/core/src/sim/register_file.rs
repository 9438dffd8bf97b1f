use std::sync::Mutex;

use super::latency::{AccessKind, LatencySource};
use super::{FaultMode, SimError};

#[derive(Debug)]
struct FileState {
    words: Vec<u32>,
    fault: Option<FaultMode>,
    // Snapshot served while stuck.
    frozen: Option<Vec<u32>>,
}

/// Word-addressed stand-in for an AXI4-Lite slave.
///
/// Every call is one bus transaction and is charged against the latency
/// model while the file is locked, so concurrent users serialize the same
/// way they would on a single slave port.
#[derive(Debug)]
pub struct RegisterFile {
    size: u64,
    init_pattern: u32,
    state: Mutex<FileState>,
    latency: LatencySource,
}

impl RegisterFile {
    /// `size` is in bytes and must be a non-zero multiple of 4.
    pub fn new(size: u64, init_pattern: u32, latency: LatencySource) -> Result<Self, SimError> {
        if size == 0 || size % 4 != 0 {
            return Err(SimError::BadSize(size));
        }
        Ok(Self {
            size,
            init_pattern,
            state: Mutex::new(FileState {
                words: vec![init_pattern; (size / 4) as usize],
                fault: None,
                frozen: None,
            }),
            latency,
        })
    }

    pub fn size(&self) -> u64 {
        self.size
    }

    pub fn word_count(&self) -> u64 {
        self.size / 4
    }

    pub fn init_pattern(&self) -> u32 {
        self.init_pattern
    }

    pub fn latency(&self) -> &LatencySource {
        &self.latency
    }

    fn check(&self, first: u64, count: usize) -> Result<(), SimError> {
        let end = first.checked_add(count as u64);
        match end {
            Some(end) if end <= self.word_count() => Ok(()),
            _ => Err(SimError::OutOfRange { first, count: count as u64, words: self.word_count() }),
        }
    }

    pub fn raw_read(&self, index: u64) -> Result<u32, SimError> {
        let mut out = [0u32; 1];
        self.read_burst(index, &mut out)?;
        Ok(out[0])
    }

    pub fn raw_write(&self, index: u64, value: u32) -> Result<(), SimError> {
        self.write_burst(index, &[value])
    }

    pub fn read_burst(&self, first: u64, out: &mut [u32]) -> Result<(), SimError> {
        self.check(first, out.len())?;
        let state = self.state.lock().unwrap();
        if state.fault == Some(FaultMode::ErrorOnAccess) {
            return Err(SimError::Faulted);
        }
        self.latency.charge(AccessKind::Read, out.len() as u64);
        let src = state.frozen.as_ref().unwrap_or(&state.words);
        let first = first as usize;
        out.copy_from_slice(&src[first..first + out.len()]);
        Ok(())
    }

    pub fn write_burst(&self, first: u64, values: &[u32]) -> Result<(), SimError> {
        self.check(first, values.len())?;
        let mut state = self.state.lock().unwrap();
        match state.fault {
            Some(FaultMode::ErrorOnAccess) => return Err(SimError::Faulted),
            Some(FaultMode::Stuck) => {
                // The transaction happens, the cells do not change.
                self.latency.charge(AccessKind::Write, values.len() as u64);
                return Ok(());
            }
            None => {}
        }
        self.latency.charge(AccessKind::Write, values.len() as u64);
        let first = first as usize;
        state.words[first..first + values.len()].copy_from_slice(values);
        Ok(())
    }

    pub fn inject_fault(&self, mode: FaultMode) {
        let mut state = self.state.lock().unwrap();
        state.frozen = match mode {
            FaultMode::Stuck => Some(state.frozen.take().unwrap_or_else(|| state.words.clone())),
            FaultMode::ErrorOnAccess => None,
        };
        state.fault = Some(mode);
    }

    pub fn clear_fault(&self) {
        let mut state = self.state.lock().unwrap();
        state.fault = None;
        state.frozen = None;
    }

    pub fn fault(&self) -> Option<FaultMode> {
        self.state.lock().unwrap().fault
    }

    /// Copy of the storage without any bus cost; for oracles and dumps.
    pub fn snapshot(&self) -> Vec<u32> {
        self.state.lock().unwrap().words.clone()
    }
}
