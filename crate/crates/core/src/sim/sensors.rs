use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const TEMPERATURE: &str = "temperature";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub temperature_mc: i64,
    pub temperature_noise_mc: i64,
    pub voltages_mv: BTreeMap<String, i64>,
    pub voltage_noise_mv: i64,
    pub boot_image_size: usize,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            temperature_mc: 45_000,
            temperature_noise_mc: 0,
            voltages_mv: [("vccint".to_string(), 850), ("vccaux".to_string(), 1_800)].into(),
            voltage_noise_mv: 0,
            boot_image_size: 64 * 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SensorReadings {
    /// `None` when the sensor did not answer.
    pub temperature_mc: Option<i64>,
    pub voltages_mv: BTreeMap<String, Option<i64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChecksumVerdict {
    Ok,
    Mismatch { stored: u32, actual: u32 },
}

impl ChecksumVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, ChecksumVerdict::Ok)
    }
}

pub fn crc32(data: &[u8]) -> u32 {
    crc32fast::hash(data)
}

/// Board sensors and the boot image whose checksum is recorded at startup.
#[derive(Debug)]
pub struct SimSensors {
    config: SensorConfig,
    temperature_mc: Mutex<i64>,
    boot_image: Mutex<Vec<u8>>,
    stored_crc: u32,
    failed: Mutex<BTreeSet<String>>,
    rng: Mutex<ChaCha8Rng>,
}

impl SimSensors {
    pub fn new(config: SensorConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut boot_image = vec![0u8; config.boot_image_size];
        rng.fill_bytes(&mut boot_image);
        let stored_crc = crc32(&boot_image);
        Self {
            temperature_mc: Mutex::new(config.temperature_mc),
            config,
            boot_image: Mutex::new(boot_image),
            stored_crc,
            failed: Mutex::new(BTreeSet::new()),
            rng: Mutex::new(rng),
        }
    }

    pub fn config(&self) -> &SensorConfig {
        &self.config
    }

    fn noisy(rng: &mut ChaCha8Rng, value: i64, noise: i64) -> i64 {
        if noise <= 0 {
            value
        } else {
            value + rng.random_range(-noise..=noise)
        }
    }

    pub fn sample_sensors(&self) -> SensorReadings {
        let failed = self.failed.lock().unwrap();
        let mut rng = self.rng.lock().unwrap();
        let temperature_mc = (!failed.contains(TEMPERATURE)).then(|| {
            Self::noisy(&mut rng, *self.temperature_mc.lock().unwrap(), self.config.temperature_noise_mc)
        });
        let voltages_mv = self
            .config
            .voltages_mv
            .iter()
            .map(|(name, &mv)| {
                let value = (!failed.contains(name)).then(|| Self::noisy(&mut rng, mv, self.config.voltage_noise_mv));
                (name.clone(), value)
            })
            .collect();
        SensorReadings { temperature_mc, voltages_mv }
    }

    pub fn stored_checksum(&self) -> u32 {
        self.stored_crc
    }

    pub fn verify_boot_checksum(&self) -> ChecksumVerdict {
        let actual = crc32(&self.boot_image.lock().unwrap());
        if actual == self.stored_crc {
            ChecksumVerdict::Ok
        } else {
            ChecksumVerdict::Mismatch { stored: self.stored_crc, actual }
        }
    }

    pub fn boot_image(&self) -> Vec<u8> {
        self.boot_image.lock().unwrap().clone()
    }

    pub fn boot_image_len(&self) -> usize {
        self.boot_image.lock().unwrap().len()
    }

    /// XORs one byte of the boot image. A zero mask is a no-op.
    pub fn corrupt_boot_byte(&self, index: usize, mask: u8) {
        let mut image = self.boot_image.lock().unwrap();
        let len = image.len();
        image[index % len] ^= mask;
    }

    pub fn restore_boot_image(&self, image: Vec<u8>) {
        *self.boot_image.lock().unwrap() = image;
    }

    pub fn set_temperature(&self, mc: i64) {
        *self.temperature_mc.lock().unwrap() = mc;
    }

    pub fn fail_sensor(&self, name: &str) {
        self.failed.lock().unwrap().insert(name.to_string());
    }

    pub fn repair_sensor(&self, name: &str) {
        self.failed.lock().unwrap().remove(name);
    }
}
