//! Sample summaries and the one-sample Kolmogorov–Smirnov test.

use serde::{Deserialize, Serialize};

use crate::quad::pairwise_sum;

/// A Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    /// Wall-clock seconds spent producing the samples.
    pub elapsed: f64,
}

impl Estimate {
    pub fn from_values(values: &[f64], elapsed: f64) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: f64::NAN,
                std_error: f64::NAN,
                n,
                elapsed,
            };
        }
        let mean = pairwise_sum(values) / n as f64;
        let std_error = if n > 1 {
            let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
            (pairwise_sum(&dev) / (n - 1) as f64 / n as f64).sqrt()
        } else {
            f64::INFINITY
        };
        Self {
            mean,
            std_error,
            n,
            elapsed,
        }
    }

    /// `(reference − mean)/std_error`.
    pub fn zscore(&self, reference: f64) -> f64 {
        (reference - self.mean) / self.std_error
    }

    /// Equality of everything except the timing.
    pub fn same_numbers(&self, other: &Self) -> bool {
        self.mean.to_bits() == other.mean.to_bits()
            && self.std_error.to_bits() == other.std_error.to_bits()
            && self.n == other.n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against the continuous `cdf`, with the
/// `(√n + 0.12 + 0.11/√n)` small-sample correction.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsTest {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let root = nf.sqrt();
    KsTest {
        statistic: d,
        p_value: kolmogorov_survival((root + 0.12 + 0.11 / root) * d),
        n,
    }
}
