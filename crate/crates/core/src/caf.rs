//! Content-aware low-pass filter variances.
//!
//! Each primitive is rendered with `Σ + s_i I`. Under the adaptive policy a
//! primitive created when the cloud holds `N` primitives gets
//! `s = H·W / (α·N)` and keeps it for life, so early sparse primitives are
//! wide and later ones progressively sharper. The value is baked into the
//! stored covariance and costs no bits.

use crate::error::{Error, Result};
use crate::model::GaussianCloud;

/// Filter variance for primitives created at cloud size `count`.
pub fn filter_variance_for_new(height: usize, width: usize, count: usize, alpha: f64) -> Result<f64> {
    if count == 0 {
        return Err(Error::EmptyCloud);
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidConfig("caf alpha must be positive"));
    }
    Ok((height * width) as f64 / (alpha * count as f64))
}

/// How filter variances are assigned to new primitives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CafPolicy {
    /// `H·W / (α·N)` at creation time.
    Adaptive { alpha: f64 },
    /// The same variance for every primitive (the ablation baseline).
    Constant(f64),
}

impl CafPolicy {
    pub fn new(enabled: bool, alpha: f64, constant_s: f64) -> Self {
        if enabled {
            CafPolicy::Adaptive { alpha }
        } else {
            CafPolicy::Constant(constant_s)
        }
    }

    /// Variance for primitives created when the cloud reaches `count`.
    pub fn variance_for_new(&self, height: usize, width: usize, count: usize) -> Result<f64> {
        match *self {
            CafPolicy::Adaptive { alpha } => filter_variance_for_new(height, width, count, alpha),
            CafPolicy::Constant(s) if s >= 0.0 => Ok(s),
            CafPolicy::Constant(_) => Err(Error::InvalidConfig("filter variance must be >= 0")),
        }
    }
}

/// Enforces the policy on an existing cloud. With CAF disabled every
/// primitive gets `constant_s`; with it enabled existing values are kept,
/// since they were fixed when each primitive was created.
pub fn apply_caf_policy(cloud: &mut GaussianCloud, enabled: bool, constant_s: f64) -> Result<()> {
    if enabled {
        return Ok(());
    }
    cloud.set_all_filter_variances(constant_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovarianceParam, Parameterization};

    #[test]
    fn normalization_point() {
        assert_eq!(filter_variance_for_new(32, 10, 10, 32.0).unwrap(), 1.0);
    }

    #[test]
    fn kodak_sized_value() {
        let s = filter_variance_for_new(768, 512, 5_000, 32.0).unwrap();
        assert!((s - 2.4576).abs() < 1e-12, "{s}");
    }

    #[test]
    fn doubling_count_halves_variance() {
        let a = filter_variance_for_new(100, 70, 300, 7.0).unwrap();
        let b = filter_variance_for_new(100, 70, 600, 7.0).unwrap();
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn rejects_empty_count() {
        assert_eq!(filter_variance_for_new(4, 4, 0, 32.0), Err(Error::EmptyCloud));
    }

    #[test]
    fn disabled_policy_sets_constant() {
        let mut cloud = GaussianCloud::new(Parameterization::Direct, 3).unwrap();
        let cov = CovarianceParam::Direct { s11: 1.0, s12: 0.0, s22: 1.0 };
        cloud.push([0.0; 2], cov, [0.0; 3], 3.0).unwrap();
        cloud.push([1.0; 2], cov, [0.0; 3], 1.5).unwrap();
        apply_caf_policy(&mut cloud, true, 0.5).unwrap();
        assert_eq!(cloud.filter_variances(), &[3.0, 1.5]);
        apply_caf_policy(&mut cloud, false, 0.5).unwrap();
        assert_eq!(cloud.filter_variances(), &[0.5, 0.5]);
    }
}
