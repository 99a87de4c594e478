//! Sample statistics for Monte Carlo estimates.

use serde::{Deserialize, Serialize};

/// One-sided standard-normal critical value at significance 0.01.
pub const Z_ONE_SIDED_01: f64 = 2.326_347_874_040_841;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, n }
    }

    pub fn exact(value: f64) -> Self {
        Self { mean: value, stderr: 0.0, n: 1 }
    }
}

/// Paired comparison of two equally indexed sample sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    /// Mean of `a[i] - b[i]`.
    pub mean_diff: f64,
    pub stderr: f64,
}

impl PairedTest {
    pub fn new(a: &[f64], b: &[f64]) -> Self {
        assert_eq!(a.len(), b.len(), "paired samples must have equal length");
        let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let e = Estimate::from_samples(&diffs);
        Self { mean_diff: e.mean, stderr: e.stderr }
    }

    pub fn z(&self) -> f64 {
        if self.stderr > 0.0 {
            self.mean_diff / self.stderr
        } else if self.mean_diff > 0.0 {
            f64::INFINITY
        } else if self.mean_diff < 0.0 {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }

    /// Rejects `mean(a) <= mean(b)` in favour of `mean(a) > mean(b)` at 0.01.
    pub fn greater_at_01(&self) -> bool {
        self.z() > Z_ONE_SIDED_01
    }

    /// Fails to reject `mean(a) <= mean(b)`: `a` is not significantly larger.
    pub fn not_greater_at_01(&self) -> bool {
        self.z() <= Z_ONE_SIDED_01
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn estimate_of_known_samples() {
        let e = Estimate::from_samples(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(e.mean, 2.5);
        // sample variance 5/3, stderr sqrt(5/12)
        assert!((e.stderr - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert_eq!(Estimate::from_samples(&[7.0]).stderr, 0.0);
    }

    #[test]
    fn paired_test_direction() {
        let a = [2.0, 3.0, 4.0, 5.0];
        let b = [1.0, 2.1, 2.9, 4.0];
        let t = PairedTest::new(&a, &b);
        assert!(t.mean_diff > 0.0);
        assert!(t.greater_at_01());
        assert!(PairedTest::new(&b, &a).not_greater_at_01());
        assert_eq!(PairedTest::new(&a, &a).z(), 0.0);
    }
}
