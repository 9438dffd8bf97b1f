use std::sync::Mutex;

use super::latency::{AccessKind, LatencySource};
use super::{FaultMode, SimError};

pub const DAC_CHANNELS: usize = 8;

#[derive(Debug)]
struct DacState {
    channels: [u16; DAC_CHANNELS],
    fault: Option<FaultMode>,
    frozen: Option<[u16; DAC_CHANNELS]>,
}

/// Eight-channel 16-bit DAC on an I²C bus, as exposed by an IIO driver.
///
/// The attribute view is `name` (read-only chip name) and `raw0`..`raw7`
/// (channel codes), in the kernel's decimal-plus-newline text form.
#[derive(Debug)]
pub struct SimI2CDevice {
    chip: String,
    state: Mutex<DacState>,
    bus: LatencySource,
}

impl SimI2CDevice {
    pub fn new(chip: impl Into<String>, bus: LatencySource) -> Self {
        Self {
            chip: chip.into(),
            state: Mutex::new(DacState { channels: [0; DAC_CHANNELS], fault: None, frozen: None }),
            bus,
        }
    }

    pub fn chip(&self) -> &str {
        &self.chip
    }

    pub fn bus(&self) -> &LatencySource {
        &self.bus
    }

    fn channel_index(channel: u32) -> Result<usize, SimError> {
        if (channel as usize) < DAC_CHANNELS {
            Ok(channel as usize)
        } else {
            Err(SimError::NoSuchChannel(channel))
        }
    }

    pub fn i2c_write16(&self, channel: u32, value: u16) -> Result<(), SimError> {
        let idx = Self::channel_index(channel)?;
        let mut state = self.state.lock().unwrap();
        if state.fault == Some(FaultMode::ErrorOnAccess) {
            return Err(SimError::Faulted);
        }
        self.bus.charge(AccessKind::Write, 1);
        if state.fault.is_none() {
            state.channels[idx] = value;
        }
        Ok(())
    }

    pub fn i2c_read16(&self, channel: u32) -> Result<u16, SimError> {
        let idx = Self::channel_index(channel)?;
        let state = self.state.lock().unwrap();
        if state.fault == Some(FaultMode::ErrorOnAccess) {
            return Err(SimError::Faulted);
        }
        self.bus.charge(AccessKind::Read, 1);
        Ok(state.frozen.as_ref().unwrap_or(&state.channels)[idx])
    }

    pub fn inject_fault(&self, mode: FaultMode) {
        let mut state = self.state.lock().unwrap();
        state.frozen = match mode {
            FaultMode::Stuck => Some(state.frozen.unwrap_or(state.channels)),
            FaultMode::ErrorOnAccess => None,
        };
        state.fault = Some(mode);
    }

    pub fn clear_fault(&self) {
        let mut state = self.state.lock().unwrap();
        state.fault = None;
        state.frozen = None;
    }

    pub fn attribute_names(&self) -> Vec<String> {
        std::iter::once("name".to_string())
            .chain((0..DAC_CHANNELS).map(|c| format!("raw{c}")))
            .collect()
    }

    fn attr_channel(name: &str) -> Option<u32> {
        let digits = name.strip_prefix("raw")?;
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        digits.parse().ok().filter(|&c: &u32| (c as usize) < DAC_CHANNELS)
    }

    /// Driver-side `show`.
    pub fn show(&self, attribute: &str) -> Result<String, SimError> {
        if attribute == "name" {
            return Ok(format!("{}\n", self.chip));
        }
        let channel = Self::attr_channel(attribute)
            .ok_or_else(|| SimError::NoSuchAttribute(attribute.to_string()))?;
        Ok(format!("{}\n", self.i2c_read16(channel)?))
    }

    /// Driver-side `store`: accepts a decimal code with optional trailing
    /// newline, like `kstrtou16`.
    pub fn store(&self, attribute: &str, text: &str) -> Result<(), SimError> {
        let channel = Self::attr_channel(attribute)
            .ok_or_else(|| SimError::NoSuchAttribute(attribute.to_string()))?;
        let trimmed = text.strip_suffix('\n').unwrap_or(text);
        let value: u16 = trimmed
            .parse()
            .map_err(|_| SimError::InvalidInput(format!("{trimmed:?} is not a 16-bit code")))?;
        self.i2c_write16(channel, value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::Timing;
    use crate::sim::latency::LatencyModel;

    fn dac() -> SimI2CDevice {
        SimI2CDevice::new("ad5675r", LatencySource::new(LatencyModel::zero(), Timing::Realtime).unwrap())
    }

    #[test]
    fn channel_roundtrip() {
        let d = dac();
        d.i2c_write16(0, 0xFFFF).unwrap();
        assert_eq!(d.i2c_read16(0).unwrap(), 0xFFFF);
        assert_eq!(d.i2c_read16(1).unwrap(), 0);
    }

    #[test]
    fn channel_eight_missing() {
        let d = dac();
        assert!(matches!(d.i2c_write16(8, 1), Err(SimError::NoSuchChannel(8))));
        assert!(matches!(d.i2c_read16(8), Err(SimError::NoSuchChannel(8))));
    }

    #[test]
    fn attribute_text_protocol() {
        let d = dac();
        assert_eq!(d.show("raw0").unwrap(), "0\n");
        d.store("raw3", "32767\n").unwrap();
        assert_eq!(d.show("raw3").unwrap(), "32767\n");
        assert_eq!(d.show("name").unwrap(), "ad5675r\n");
        assert!(matches!(d.store("raw3", "65536"), Err(SimError::InvalidInput(_))));
        assert!(matches!(d.store("name", "x"), Err(SimError::NoSuchAttribute(_))));
        assert!(matches!(d.show("raw8"), Err(SimError::NoSuchAttribute(_))));
        assert!(matches!(d.show("raw+1"), Err(SimError::NoSuchAttribute(_))));
    }

    #[test]
    fn default_bus_costs() {
        let timing = Timing::virtual_clock();
        let d = SimI2CDevice::new("ad5675r", LatencySource::new(LatencyModel::i2c_bus(), timing.clone()).unwrap());
        let n = 1000;
        for _ in 0..n {
            d.i2c_write16(0, 1).unwrap();
        }
        let write_mean = timing.now_ns() as f64 / n as f64;
        for _ in 0..n {
            d.i2c_read16(0).unwrap();
        }
        let read_mean = (timing.now_ns() as f64 / n as f64) - write_mean;
        assert!((write_mean - 161_000.0).abs() < 500.0, "{write_mean}");
        assert!((read_mean - 257_000.0).abs() < 500.0, "{read_mean}");
    }
}
