//! Summary statistics of one benchmark cell.

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum StatsError {
    #[error("{0} samples; at least 2 are needed for a standard deviation")]
    TooFewSamples(usize),
}

/// One benchmark cell: the workload size and the latency distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub size: u64,
    pub n: usize,
    pub mean_ns: f64,
    /// Sample standard deviation (n - 1 denominator).
    pub std_ns: f64,
    pub min_ns: u64,
    pub q25_ns: f64,
    pub median_ns: f64,
    pub q75_ns: f64,
    pub q99_ns: f64,
    pub max_ns: u64,
    /// Samples above the 99 % quantile, ascending.
    pub outliers: Vec<u64>,
}

impl BenchRecord {
    pub fn from_samples(size: u64, samples: &[u64]) -> Result<Self, StatsError> {
        if samples.len() < 2 {
            return Err(StatsError::TooFewSamples(samples.len()));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_unstable();
        let values: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
        let mean_ns = mean(&values);
        let q99_ns = quantile(&sorted, 0.99);
        Ok(Self {
            size,
            n: samples.len(),
            mean_ns,
            std_ns: sample_std(&values, mean_ns),
            min_ns: sorted[0],
            q25_ns: quantile(&sorted, 0.25),
            median_ns: quantile(&sorted, 0.5),
            q75_ns: quantile(&sorted, 0.75),
            q99_ns,
            max_ns: sorted[sorted.len() - 1],
            outliers: sorted.iter().copied().filter(|&s| s as f64 > q99_ns).collect(),
        })
    }

    /// Standard error of the mean.
    pub fn sem_ns(&self) -> f64 {
        self.std_ns / (self.n as f64).sqrt()
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Two-pass sample standard deviation around a precomputed `mean`.
pub fn sample_std(values: &[f64], mean: f64) -> f64 {
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of ascending `sorted` (Hyndman-Fan type 7,
/// the default of R and NumPy).
pub fn quantile(sorted: &[u64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of no samples");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let (a, b) = (sorted[lo] as f64, sorted[hi] as f64);
    a + (h - lo as f64) * (b - a)
}

/// Least-squares line through `(x, y)`: returns `(slope, intercept, r²)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn within_ulp(a: f64, b: f64) -> bool {
        a == b || (a.to_bits() as i64 - b.to_bits() as i64).abs() <= 1
    }

    #[test]
    fn one_to_ten() {
        // mean 5.5, variance 82.5 / 9, type-7 quartiles 3.25 / 5.5 / 7.75
        let r = BenchRecord::from_samples(4, &[7, 1, 10, 3, 5, 2, 9, 4, 8, 6]).unwrap();
        assert_eq!(r.mean_ns, 5.5);
        assert!(within_ulp(r.std_ns, 3.0276503540974917));
        assert_eq!((r.q25_ns, r.median_ns, r.q75_ns), (3.25, 5.5, 7.75));
        assert!(within_ulp(r.q99_ns, 9.91));
        assert_eq!((r.min_ns, r.max_ns, r.n, r.size), (1, 10, 10, 4));
        assert_eq!(r.outliers, vec![10]);
    }

    #[test]
    fn constant_samples() {
        let r = BenchRecord::from_samples(1, &[500; 7]).unwrap();
        assert_eq!((r.mean_ns, r.std_ns, r.q99_ns), (500.0, 0.0, 500.0));
        assert!(r.outliers.is_empty());
    }

    #[test]
    fn heavy_tail() {
        let mut samples = vec![300u64; 198];
        samples.extend([10_300, 10_300]);
        let r = BenchRecord::from_samples(1, &samples).unwrap();
        // h = 199 * 0.99 lies just short of 197.01, between the last 300 and
        // the first outlier; reference values from numpy.quantile / std(ddof=1).
        assert!(within_ulp(r.q99_ns, 399.99999999990905));
        assert!(within_ulp(r.std_ns, 997.4842727441167));
        assert_eq!(r.outliers, vec![10_300, 10_300]);
        assert_eq!(r.mean_ns, 400.0);
    }

    #[test]
    fn too_few() {
        assert_eq!(BenchRecord::from_samples(1, &[3]), Err(StatsError::TooFewSamples(1)));
    }

    #[test]
    fn fit_exact_line() {
        let pts: Vec<_> = (0..10).map(|i| (i as f64 * 64.0, 8.0 * i as f64 * 64.0 + 474.0)).collect();
        let (slope, intercept, r2) = linear_fit(&pts);
        assert!((slope - 8.0).abs() < 1e-12 && (intercept - 474.0).abs() < 1e-9);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn quantiles_ordered(samples in prop::collection::vec(0u64..1_000_000, 2..400)) {
            let r = BenchRecord::from_samples(1, &samples).unwrap();
            prop_assert!(r.min_ns as f64 <= r.q25_ns);
            prop_assert!(r.q25_ns <= r.median_ns);
            prop_assert!(r.median_ns <= r.q75_ns);
            prop_assert!(r.q75_ns <= r.q99_ns);
            prop_assert!(r.q99_ns <= r.max_ns as f64);
            prop_assert!(r.min_ns as f64 <= r.mean_ns && r.mean_ns <= r.max_ns as f64);
            prop_assert_eq!(r.n, samples.len());
            prop_assert!(r.outliers.len() <= samples.len() / 100 + 1);
        }
    }
}
