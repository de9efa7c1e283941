//! Sample statistics for ensemble verification.

use serde::{Deserialize, Serialize};
use libm::erfc;

use crate::error::{Error, Result};

/// Standard normal distribution function.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    covariance(x, x)
}

/// Unbiased sample covariance.
pub fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 2 {
        return f64::NAN;
    }
    let (mx, my) = (mean(x), mean(y));
    x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1) as f64
}

pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    covariance(x, y) / (variance(x) * variance(y)).sqrt()
}

pub fn std_error_of_mean(x: &[f64]) -> f64 {
    (variance(x) / x.len() as f64).sqrt()
}

/// Delete-one jackknife standard error of the sample covariance, computed
/// in linear time from the leave-one-out sums.
pub fn jackknife_se_covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return f64::NAN;
    }
    let (mx, my) = (mean(x), mean(y));
    let dx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let dy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let sx: f64 = dx.iter().sum();
    let sy: f64 = dy.iter().sum();
    let sxy: f64 = dx.iter().zip(&dy).map(|(a, b)| a * b).sum();
    let m = (n - 1) as f64;
    let loo: Vec<f64> = (0..n)
        .map(|i| {
            let (ax, ay) = (sx - dx[i], sy - dy[i]);
            let cross = sxy - dx[i] * dy[i];
            (cross - ax * ay / m) / (m - 1.0)
        })
        .collect();
    let bar = mean(&loo);
    let ss: f64 = loo.iter().map(|v| (v - bar) * (v - bar)).sum();
    (ss * (n - 1) as f64 / n as f64).sqrt()
}

pub fn jackknife_se_variance(x: &[f64]) -> f64 {
    jackknife_se_covariance(x, x)
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `samples` and `Normal(0, predicted_variance)`.
pub fn ks_distance(samples: &[f64], predicted_variance: f64) -> Result<f64> {
    if samples.len() < 20 {
        return Err(Error::InvalidArgument(format!(
            "KS distance needs at least 20 samples, got {}",
            samples.len()
        )));
    }
    if !(predicted_variance > 0.0) || !predicted_variance.is_finite() {
        return Err(Error::DegenerateVariance(format!(
            "predicted variance {predicted_variance} is not positive"
        )));
    }
    let sd = predicted_variance.sqrt();
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d = 0.0f64;
    for (i, v) in s.iter().enumerate() {
        let c = normal_cdf(v / sd);
        d = d.max(c - i as f64 / n).max((i + 1) as f64 / n - c);
    }
    Ok(d)
}

/// KS acceptance threshold: 0.03 at 5000 samples, scaled as `1/sqrt(N)`.
pub fn ks_threshold(n: usize) -> f64 {
    0.03 * (5000.0 / n as f64).sqrt()
}

/// Named sample columns from an ensemble, with their summary moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub t: f64,
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Replicates kept by the survival filter.
    pub mask: Vec<bool>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
}

impl EnsembleStats {
    pub fn new(t: f64, names: Vec<String>, columns: Vec<Vec<f64>>) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        let mut s = Self {
            t,
            names,
            columns,
            mask: vec![true; n],
            mean: vec![],
            variance: vec![],
            covariance: vec![],
        };
        s.summarize();
        s
    }

    /// Number of retained replicates.
    pub fn n(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    /// Retained samples of a column.
    pub fn samples(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(
            self.columns[i]
                .iter()
                .zip(&self.mask)
                .filter(|(_, m)| **m)
                .map(|(v, _)| *v)
                .collect(),
        )
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Self {
        self.mask = mask;
        self.summarize();
        self
    }

    fn summarize(&mut self) {
        let kept: Vec<Vec<f64>> = (0..self.names.len())
            .map(|i| self.samples(&self.names[i].clone()).unwrap_or_default())
            .collect();
        self.mean = kept.iter().map(|c| mean(c)).collect();
        self.variance = kept.iter().map(|c| variance(c).max(0.0)).collect();
        self.covariance = kept
            .iter()
            .map(|a| kept.iter().map(|b| covariance(a, b)).collect())
            .collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert_relative_eq!(normal_cdf(1.959963984540054), 0.975, epsilon = 1e-14);
        assert_relative_eq!(normal_cdf(-3.0), 0.0013498980316300946, max_relative = 1e-12);
        assert_relative_eq!(normal_cdf(-8.0), 6.22096057427178e-16, max_relative = 1e-10);
    }

    #[test]
    fn constant_samples_are_far_from_normal() {
        let d = ks_distance(&[0.0; 50], 1.0).unwrap();
        assert!(d >= 0.5);
        assert!(matches!(ks_distance(&[0.0; 50], 0.0), Err(Error::DegenerateVariance(_))));
        assert!(ks_distance(&[0.0; 5], 1.0).is_err());
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let x = [1.0, 4.0, 2.5, -1.0, 0.3, 7.0, 2.2];
        let y = [0.5, 1.0, -2.0, 3.0, 0.1, 2.0, -0.7];
        let n = x.len();
        let loo: Vec<f64> = (0..n)
            .map(|i| {
                let xs: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| x[j]).collect();
                let ys: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| y[j]).collect();
                covariance(&xs, &ys)
            })
            .collect();
        let bar = mean(&loo);
        let want = (loo.iter().map(|v| (v - bar).powi(2)).sum::<f64>() * (n - 1) as f64 / n as f64).sqrt();
        assert_relative_eq!(jackknife_se_covariance(&x, &y), want, max_relative = 1e-12);
    }

    #[test]
    fn ensemble_mask_changes_summary() {
        let s = EnsembleStats::new(1.0, vec!["a".into()], vec![vec![1.0, 2.0, 3.0, 100.0]]);
        assert_relative_eq!(s.mean[0], 26.5);
        let s = s.with_mask(vec![true, true, true, false]);
        assert_eq!(s.n(), 3);
        assert_relative_eq!(s.mean[0], 2.0);
        assert_relative_eq!(s.variance[0], 1.0);
    }
}
