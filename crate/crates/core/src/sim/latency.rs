//! Access-cost model of simulated hardware.

use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::clock::Timing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

/// Cost of one bus transaction:
/// `base(kind) + per_word_ns * (words - 1) + N(0, jitter_std_ns)`, plus
/// `outlier_ns` with probability `outlier_prob`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatencyModel {
    pub base_read_ns: u64,
    pub base_write_ns: u64,
    pub per_word_ns: u64,
    pub jitter_std_ns: f64,
    pub outlier_prob: f64,
    pub outlier_ns: u64,
    pub rng_seed: u64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LatencyModelError {
    #[error("jitter_std_ns must be a finite value >= 0, got {0}")]
    Jitter(f64),
    #[error("outlier_prob must lie in [0, 1], got {0}")]
    OutlierProb(f64),
}

impl Default for LatencyModel {
    fn default() -> Self {
        Self::register_bus()
    }
}

impl LatencyModel {
    /// No cost at all; functional behavior only.
    pub const fn zero() -> Self {
        Self {
            base_read_ns: 0,
            base_write_ns: 0,
            per_word_ns: 0,
            jitter_std_ns: 0.0,
            outlier_prob: 0.0,
            outlier_ns: 0,
            rng_seed: 0,
        }
    }

    /// Memory-mapped AXI4-Lite register access from user space: 326 ns
    /// read, 243 ns write, with rare ~10 µs scheduling outliers. The bus has
    /// no bursts, so every extra word is another single transaction, charged
    /// at the read cost.
    pub const fn register_bus() -> Self {
        Self {
            base_read_ns: 326,
            base_write_ns: 243,
            per_word_ns: 326,
            jitter_std_ns: 7.0,
            outlier_prob: 0.002,
            outlier_ns: 10_000,
            rng_seed: 0x5eed_0001,
        }
    }

    /// Software cost of one endpoint API call on top of the bus access
    /// (482 ns read / 280 ns write at the endpoint level in total).
    pub const fn endpoint_overhead() -> Self {
        Self {
            base_read_ns: 156,
            base_write_ns: 37,
            per_word_ns: 0,
            jitter_std_ns: 15.0,
            outlier_prob: 0.0,
            outlier_ns: 0,
            rng_seed: 0x5eed_0002,
        }
    }

    /// Single 16-bit DAC register access through the kernel I²C driver.
    pub const fn i2c_bus() -> Self {
        Self {
            base_read_ns: 257_000,
            base_write_ns: 161_000,
            per_word_ns: 0,
            jitter_std_ns: 1_500.0,
            outlier_prob: 0.0,
            outlier_ns: 0,
            rng_seed: 0x5eed_0003,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    /// Same model with jitter and outliers removed.
    pub fn deterministic(mut self) -> Self {
        self.jitter_std_ns = 0.0;
        self.outlier_prob = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), LatencyModelError> {
        if !self.jitter_std_ns.is_finite() || self.jitter_std_ns < 0.0 {
            return Err(LatencyModelError::Jitter(self.jitter_std_ns));
        }
        if !(0.0..=1.0).contains(&self.outlier_prob) {
            return Err(LatencyModelError::OutlierProb(self.outlier_prob));
        }
        Ok(())
    }

    pub fn base_ns(&self, kind: AccessKind) -> u64 {
        match kind {
            AccessKind::Read => self.base_read_ns,
            AccessKind::Write => self.base_write_ns,
        }
    }

    /// Cost of a transaction without jitter or outliers.
    pub fn nominal_ns(&self, kind: AccessKind, words: u64) -> u64 {
        self.base_ns(kind) + self.per_word_ns * words.saturating_sub(1)
    }

    /// Expectation of [`LatencySource::sample_ns`], ignoring the clamp at 0.
    pub fn expected_ns(&self, kind: AccessKind, words: u64) -> f64 {
        self.nominal_ns(kind, words) as f64 + self.outlier_prob * self.outlier_ns as f64
    }
}

/// A [`LatencyModel`] bound to a random stream and a [`Timing`].
#[derive(Debug)]
pub struct LatencySource {
    model: LatencyModel,
    jitter: Option<Normal<f64>>,
    rng: Mutex<ChaCha8Rng>,
    timing: Timing,
}

impl LatencySource {
    pub fn new(model: LatencyModel, timing: Timing) -> Result<Self, LatencyModelError> {
        model.validate()?;
        let jitter = (model.jitter_std_ns > 0.0)
            .then(|| Normal::new(0.0, model.jitter_std_ns).expect("validated std"));
        Ok(Self {
            model,
            jitter,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(model.rng_seed)),
            timing,
        })
    }

    pub fn model(&self) -> &LatencyModel {
        &self.model
    }

    pub fn timing(&self) -> &Timing {
        &self.timing
    }

    pub fn sample_ns(&self, kind: AccessKind, words: u64) -> u64 {
        let nominal = self.model.nominal_ns(kind, words);
        if self.jitter.is_none() && self.model.outlier_prob == 0.0 {
            return nominal;
        }
        let mut rng = self.rng.lock().unwrap();
        let mut delay = nominal as f64;
        if let Some(jitter) = &self.jitter {
            delay += jitter.sample(&mut *rng);
        }
        if self.model.outlier_prob > 0.0 && rng.random_bool(self.model.outlier_prob) {
            delay += self.model.outlier_ns as f64;
        }
        delay.max(0.0).round() as u64
    }

    /// Samples a delay, waits it out per the timing mode, and returns it.
    pub fn charge(&self, kind: AccessKind, words: u64) -> u64 {
        let delay = self.sample_ns(kind, words);
        self.timing.delay_ns(delay);
        delay
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_measured_platform() {
        let bus = LatencyModel::register_bus();
        let ep = LatencyModel::endpoint_overhead();
        assert_eq!(bus.nominal_ns(AccessKind::Read, 1), 326);
        assert_eq!(bus.nominal_ns(AccessKind::Write, 1), 243);
        assert_eq!(ep.base_read_ns + bus.base_read_ns, 482);
        assert_eq!(ep.base_write_ns + bus.base_write_ns, 280);
        let i2c = LatencyModel::i2c_bus();
        assert_eq!(i2c.base_write_ns, 161_000);
        assert_eq!(i2c.base_read_ns, 257_000);
    }

    #[test]
    fn invalid_models_rejected() {
        let mut m = LatencyModel::zero();
        m.outlier_prob = 1.5;
        assert_eq!(m.validate(), Err(LatencyModelError::OutlierProb(1.5)));
        m.outlier_prob = 0.0;
        m.jitter_std_ns = -1.0;
        assert!(LatencySource::new(m, Timing::Realtime).is_err());
    }

    #[test]
    fn same_seed_same_sequence() {
        let draw = || {
            let src = LatencySource::new(LatencyModel::register_bus(), Timing::virtual_clock()).unwrap();
            (0..1000).map(|i| src.sample_ns(AccessKind::Read, 1 + i % 4)).collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn jitter_and_outlier_statistics() {
        let model = LatencyModel {
            base_read_ns: 5_000,
            base_write_ns: 5_000,
            per_word_ns: 0,
            jitter_std_ns: 40.0,
            outlier_prob: 0.002,
            outlier_ns: 10_000,
            rng_seed: 99,
        };
        let src = LatencySource::new(model, Timing::virtual_clock()).unwrap();
        let n = 10_000usize;
        let samples: Vec<f64> = (0..n).map(|_| src.sample_ns(AccessKind::Read, 1) as f64).collect();
        let (outliers, inliers): (Vec<f64>, Vec<f64>) =
            samples.iter().partition(|&&s| s > 5_000.0 + 5_000.0);
        let p = model.outlier_prob;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        let expected = n as f64 * p;
        assert!((outliers.len() as f64 - expected).abs() <= 3.0 * sigma, "outliers {}", outliers.len());
        let mean = inliers.iter().sum::<f64>() / inliers.len() as f64;
        let var = inliers.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (inliers.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 40.0).abs() <= 0.2 * 40.0, "std {std}");
    }

    #[test]
    fn zero_model_charges_nothing() {
        let timing = Timing::virtual_clock();
        let src = LatencySource::new(LatencyModel::zero(), timing.clone()).unwrap();
        assert_eq!(src.charge(AccessKind::Write, 64), 0);
        assert_eq!(timing.now_ns(), 0);
    }
}
