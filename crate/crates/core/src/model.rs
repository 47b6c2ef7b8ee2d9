//! Core domain types: image planes, covariance parameterizations, the
//! Gaussian cloud and the training configuration.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;

/// An `H × W × 3` floating point image, row-major, channels interleaved.
///
/// Values are nominally in `[0, 1]` but rendered planes are not clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImagePlane {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidDimensions { height, width });
        }
        Ok(Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        })
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::InvalidDimensions { height, width });
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f64; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Copy with every channel clamped to `[0, 1]`.
    pub fn clamped(&self) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn ensure_same_dims(&self, other: &ImagePlane) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch {
                left_height: self.height,
                left_width: self.width,
                right_height: other.height,
                right_width: other.width,
            });
        }
        Ok(())
    }

    /// Rectangular sub-image starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || row + height > self.height || col + width > self.width {
            return Err(Error::InvalidDimensions { height, width });
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for r in row..row + height {
            let start = (r * self.width + col) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Self::from_data(height, width, data)
    }
}

/// A symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sym2 {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2::new(1.0, 0.0, 1.0);

    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Self { xx, xy, yy }
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.xx * self.yy - self.xy * self.xy
    }

    /// `self + s·I`.
    #[inline]
    pub fn add_isotropic(&self, s: f64) -> Self {
        Self::new(self.xx + s, self.xy, self.yy + s)
    }

    /// Inverse, or `None` when the determinant is zero.
    #[inline]
    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if det == 0.0 || !det.is_finite() {
            return None;
        }
        let inv = 1.0 / det;
        Some(Self::new(self.yy * inv, -self.xy * inv, self.xx * inv))
    }

    #[inline]
    pub fn to_array(&self) -> [[f64; 2]; 2] {
        [[self.xx, self.xy], [self.xy, self.yy]]
    }

    /// Lower-triangular factor `(l11, l21, l22)` with `L·Lᵀ = self`, for
    /// positive definite input.
    pub fn cholesky(&self) -> Option<[f64; 3]> {
        if !(self.xx > 0.0) || !(self.det() > 0.0) {
            return None;
        }
        let l11 = math::sqrt(self.xx);
        let l21 = self.xy / l11;
        let l22 = math::sqrt(self.yy - l21 * l21);
        Some([l11, l21, l22])
    }
}

/// Validity test for a 2×2 covariance: `det ≥ 0`, `Σ11 ≥ 0`, `Σ22 ≥ 0`.
#[inline]
pub fn is_psd(sigma: &Sym2) -> bool {
    sigma.det() >= 0.0 && sigma.xx >= 0.0 && sigma.yy >= 0.0
}

/// Which covariance parameterization a cloud stores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Parameterization {
    /// Σ entries stored as-is.
    Direct,
    /// Lower-triangular `L` with `Σ = L·Lᵀ`.
    Cholesky,
    /// Angle and scales with `Σ = R·S·Sᵀ·Rᵀ`.
    #[cfg_attr(feature = "serde", serde(rename = "rs"))]
    RotScale,
}

impl Parameterization {
    pub const ALL: [Parameterization; 3] = [
        Parameterization::Direct,
        Parameterization::Cholesky,
        Parameterization::RotScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Parameterization::Direct => "direct",
            Parameterization::Cholesky => "cholesky",
            Parameterization::RotScale => "rs",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "direct" => Some(Parameterization::Direct),
            "cholesky" => Some(Parameterization::Cholesky),
            "rs" | "rotscale" => Some(Parameterization::RotScale),
            _ => None,
        }
    }

    pub fn as_byte(self) -> u8 {
        match self {
            Parameterization::Direct => 0,
            Parameterization::Cholesky => 1,
            Parameterization::RotScale => 2,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Parameterization::Direct),
            1 => Some(Parameterization::Cholesky),
            2 => Some(Parameterization::RotScale),
            _ => None,
        }
    }
}

/// One primitive's covariance in one of the three parameterizations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovarianceParam {
    Direct { s11: f64, s12: f64, s22: f64 },
    Cholesky { l11: f64, l21: f64, l22: f64 },
    RotScale { theta: f64, s1: f64, s2: f64 },
}

impl CovarianceParam {
    pub fn from_raw(kind: Parameterization, raw: [f64; 3]) -> Self {
        let [a, b, c] = raw;
        match kind {
            Parameterization::Direct => CovarianceParam::Direct {
                s11: a,
                s12: b,
                s22: c,
            },
            Parameterization::Cholesky => CovarianceParam::Cholesky {
                l11: a,
                l21: b,
                l22: c,
            },
            Parameterization::RotScale => CovarianceParam::RotScale {
                theta: a,
                s1: b,
                s2: c,
            },
        }
    }

    pub fn raw(&self) -> [f64; 3] {
        match *self {
            CovarianceParam::Direct { s11, s12, s22 } => [s11, s12, s22],
            CovarianceParam::Cholesky { l11, l21, l22 } => [l11, l21, l22],
            CovarianceParam::RotScale { theta, s1, s2 } => [theta, s1, s2],
        }
    }

    pub fn kind(&self) -> Parameterization {
        match self {
            CovarianceParam::Direct { .. } => Parameterization::Direct,
            CovarianceParam::Cholesky { .. } => Parameterization::Cholesky,
            CovarianceParam::RotScale { .. } => Parameterization::RotScale,
        }
    }

    /// The 2×2 covariance this parameter set describes.
    pub fn materialize(&self) -> Sym2 {
        match *self {
            CovarianceParam::Direct { s11, s12, s22 } => Sym2::new(s11, s12, s22),
            CovarianceParam::Cholesky { l11, l21, l22 } => {
                Sym2::new(l11 * l11, l11 * l21, l21 * l21 + l22 * l22)
            }
            CovarianceParam::RotScale { theta, s1, s2 } => {
                let (sin, cos) = math::sin_cos(theta);
                let (v1, v2) = (s1 * s1, s2 * s2);
                Sym2::new(
                    cos * cos * v1 + sin * sin * v2,
                    cos * sin * (v1 - v2),
                    sin * sin * v1 + cos * cos * v2,
                )
            }
        }
    }

    /// Pulls a gradient w.r.t. the materialized entries `(∂xx, ∂xy, ∂yy)`
    /// back onto this parameterization's three raw values. `∂xy` treats the
    /// off-diagonal as a single symmetric parameter.
    pub fn pullback(&self, grad: [f64; 3]) -> [f64; 3] {
        let [gxx, gxy, gyy] = grad;
        match *self {
            CovarianceParam::Direct { .. } => grad,
            CovarianceParam::Cholesky { l11, l21, l22 } => [
                2.0 * l11 * gxx + l21 * gxy,
                l11 * gxy + 2.0 * l21 * gyy,
                2.0 * l22 * gyy,
            ],
            CovarianceParam::RotScale { theta, s1, s2 } => {
                let (sin, cos) = math::sin_cos(theta);
                let (v1, v2) = (s1 * s1, s2 * s2);
                let diff = v1 - v2;
                // d/dθ: xx' = -sin2θ·diff, xy' = cos2θ·diff, yy' = sin2θ·diff
                let sin2 = 2.0 * sin * cos;
                let cos2 = cos * cos - sin * sin;
                let d_theta = diff * (-sin2 * gxx + cos2 * gxy + sin2 * gyy);
                let d_s1 = 2.0 * s1 * (cos * cos * gxx + cos * sin * gxy + sin * sin * gyy);
                let d_s2 = 2.0 * s2 * (sin * sin * gxx - cos * sin * gxy + cos * cos * gyy);
                [d_theta, d_s1, d_s2]
            }
        }
    }
}

/// Structure-of-arrays store of `N ≤ M` Gaussian primitives.
///
/// Positions are `(x, y)` in continuous pixel coordinates: `x` runs along
/// columns in `[0, W)`, `y` along rows in `[0, H)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    kind: Parameterization,
    max_budget: usize,
    pub(crate) positions: Vec<[f64; 2]>,
    pub(crate) cov_params: Vec<[f64; 3]>,
    pub(crate) colors: Vec<[f64; 3]>,
    pub(crate) filter_variances: Vec<f64>,
}

impl GaussianCloud {
    pub fn new(kind: Parameterization, max_budget: usize) -> Result<Self> {
        if max_budget == 0 {
            return Err(Error::InvalidConfig("max budget must be positive"));
        }
        Ok(Self {
            kind,
            max_budget,
            positions: Vec::new(),
            cov_params: Vec::new(),
            colors: Vec::new(),
            filter_variances: Vec::new(),
        })
    }

    /// Builds a cloud from parallel attribute arrays.
    pub fn from_parts(
        kind: Parameterization,
        max_budget: usize,
        positions: Vec<[f64; 2]>,
        cov_params: Vec<[f64; 3]>,
        colors: Vec<[f64; 3]>,
        filter_variances: Vec<f64>,
    ) -> Result<Self> {
        let n = positions.len();
        if cov_params.len() != n || colors.len() != n || filter_variances.len() != n {
            return Err(Error::InvalidConfig("attribute arrays differ in length"));
        }
        if n > max_budget || max_budget == 0 {
            return Err(Error::InvalidConfig("primitive count exceeds budget"));
        }
        if filter_variances.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::InvalidConfig("filter variances must be non-negative"));
        }
        Ok(Self {
            kind,
            max_budget,
            positions,
            cov_params,
            colors,
            filter_variances,
        })
    }

    #[inline]
    pub fn kind(&self) -> Parameterization {
        self.kind
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    #[inline]
    pub fn max_budget(&self) -> usize {
        self.max_budget
    }

    /// Remaining allowance `M − N`.
    #[inline]
    pub fn headroom(&self) -> usize {
        self.max_budget - self.len()
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.positions
    }

    pub fn positions_mut(&mut self) -> &mut [[f64; 2]] {
        &mut self.positions
    }

    pub fn cov_params(&self) -> &[[f64; 3]] {
        &self.cov_params
    }

    pub fn cov_params_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.cov_params
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn colors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.colors
    }

    pub fn filter_variances(&self) -> &[f64] {
        &self.filter_variances
    }

    /// Overwrites every filter variance. Negative or NaN values are rejected.
    pub fn set_all_filter_variances(&mut self, s: f64) -> Result<()> {
        if !(s >= 0.0) {
            return Err(Error::InvalidConfig("filter variance must be non-negative"));
        }
        self.filter_variances.iter_mut().for_each(|v| *v = s);
        Ok(())
    }

    /// Appends one primitive; fails once the budget is exhausted.
    pub fn push(
        &mut self,
        position: [f64; 2],
        cov: CovarianceParam,
        color: [f64; 3],
        filter_variance: f64,
    ) -> Result<()> {
        if self.len() >= self.max_budget {
            return Err(Error::InvalidConfig("budget exhausted"));
        }
        if cov.kind() != self.kind {
            return Err(Error::InvalidConfig("parameterization mismatch"));
        }
        if !(filter_variance >= 0.0) {
            return Err(Error::InvalidConfig("filter variance must be non-negative"));
        }
        self.positions.push(position);
        self.cov_params.push(cov.raw());
        self.colors.push(color);
        self.filter_variances.push(filter_variance);
        Ok(())
    }

    #[inline]
    pub fn covariance(&self, i: usize) -> CovarianceParam {
        CovarianceParam::from_raw(self.kind, self.cov_params[i])
    }

    /// Unfiltered covariance Σ of primitive `i`.
    #[inline]
    pub fn raw_covariance(&self, i: usize) -> Sym2 {
        self.covariance(i).materialize()
    }

    /// Filtered covariance `Σ + s·I` of primitive `i`; this is what is
    /// rendered and stored.
    #[inline]
    pub fn filtered_covariance(&self, i: usize) -> Sym2 {
        self.raw_covariance(i)
            .add_isotropic(self.filter_variances[i])
    }

    /// Keeps the primitives whose mask entry is `true`, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.len());
        retain_by(&mut self.positions, keep);
        retain_by(&mut self.cov_params, keep);
        retain_by(&mut self.colors, keep);
        retain_by(&mut self.filter_variances, keep);
    }

    /// Subset of the primitives in `indices`, same budget.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            kind: self.kind,
            max_budget: self.max_budget,
            positions: indices.iter().map(|&i| self.positions[i]).collect(),
            cov_params: indices.iter().map(|&i| self.cov_params[i]).collect(),
            colors: indices.iter().map(|&i| self.colors[i]).collect(),
            filter_variances: indices.iter().map(|&i| self.filter_variances[i]).collect(),
        }
    }

    /// Concatenates two clouds of the same parameterization; the budget is
    /// the sum of both budgets.
    pub fn union(&self, other: &Self) -> Result<Self> {
        if self.kind != other.kind {
            return Err(Error::InvalidConfig("parameterization mismatch"));
        }
        let mut out = self.clone();
        out.max_budget = self.max_budget + other.max_budget;
        out.positions.extend_from_slice(&other.positions);
        out.cov_params.extend_from_slice(&other.cov_params);
        out.colors.extend_from_slice(&other.colors);
        out.filter_variances.extend_from_slice(&other.filter_variances);
        Ok(out)
    }
}

pub(crate) fn retain_by<T>(v: &mut Vec<T>, keep: &[bool]) {
    let mut it = keep.iter();
    v.retain(|_| *it.next().unwrap());
}

/// Optimization, densification and compression schedule.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub max_gaussians: usize,
    pub total_iterations: u32,
    pub grow_interval: u32,
    pub prune_interval: u32,
    pub grow_start: u32,
    pub grow_stop: u32,
    pub lr_position: f64,
    pub lr_covariance: f64,
    pub lr_color: f64,
    pub lr_decay_iteration: u32,
    pub lr_decay_factor: f64,
    pub quantizer_lr: f64,
    pub warmup_iterations: u32,
    pub caf_alpha: f64,
    /// Filter variance used for every primitive when CAF is off.
    pub constant_filter_variance: f64,
    pub seed: u64,
    pub parameterization: Parameterization,
    pub enable_densification: bool,
    pub enable_caf: bool,
    pub cutoff_sigmas: f64,
    pub log_interval: u32,
    /// Bit depths for (position, covariance, color) channels.
    pub bit_depths: [u8; 3],
    /// Scale quantizer gradients by `1/√(count·Q_max)`.
    pub lsq_grad_scale: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_gaussians: 5_000,
            total_iterations: 50_000,
            grow_interval: 5_000,
            prune_interval: 100,
            grow_start: 5_000,
            grow_stop: 45_000,
            lr_position: 0.18,
            lr_covariance: 0.18,
            lr_color: 0.18,
            lr_decay_iteration: 20_000,
            lr_decay_factor: 0.5,
            quantizer_lr: 0.001,
            warmup_iterations: 6_000,
            caf_alpha: 32.0,
            constant_filter_variance: 0.5,
            seed: 0,
            parameterization: Parameterization::Direct,
            enable_densification: true,
            enable_caf: true,
            cutoff_sigmas: crate::rasterizer::DEFAULT_CUTOFF_SIGMAS,
            log_interval: 100,
            bit_depths: [12, 10, 6],
            lsq_grad_scale: true,
        }
    }
}

impl TrainConfig {
    /// Default schedule rescaled to `total` iterations: growth from 10% to
    /// 90% of the run every 10%, lr decay at 40%, QAT warm-up for 12%.
    /// `for_iterations(50_000)` equals [`TrainConfig::default`].
    pub fn for_iterations(total: u32) -> Self {
        let frac = |num: u64, den: u64| ((total as u64 * num) / den) as u32;
        Self {
            total_iterations: total,
            grow_interval: frac(1, 10).max(1),
            grow_start: frac(1, 10),
            grow_stop: frac(9, 10),
            lr_decay_iteration: frac(2, 5),
            warmup_iterations: frac(3, 25),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_gaussians < 2 {
            return Err(Error::BudgetTooSmall(self.max_gaussians));
        }
        if self.grow_start > self.grow_stop || self.grow_stop > self.total_iterations {
            return Err(Error::InvalidConfig(
                "require grow_start <= grow_stop <= total_iterations",
            ));
        }
        if self.grow_interval == 0 || self.prune_interval == 0 || self.log_interval == 0 {
            return Err(Error::InvalidConfig("intervals must be positive"));
        }
        if self.warmup_iterations > self.total_iterations {
            return Err(Error::InvalidConfig("warm-up longer than the run"));
        }
        if !(self.caf_alpha > 0.0) {
            return Err(Error::InvalidConfig("caf_alpha must be positive"));
        }
        if !(self.constant_filter_variance >= 0.0) {
            return Err(Error::InvalidConfig("constant filter variance must be >= 0"));
        }
        if !(self.cutoff_sigmas > 0.0) {
            return Err(Error::InvalidConfig("cutoff_sigmas must be positive"));
        }
        for lr in [self.lr_position, self.lr_covariance, self.lr_color, self.quantizer_lr] {
            if !(lr >= 0.0) || !lr.is_finite() {
                return Err(Error::InvalidConfig("learning rates must be finite and >= 0"));
            }
        }
        if self.bit_depths.iter().any(|&b| b == 0 || b > 16) {
            return Err(Error::InvalidConfig("bit depths must be in 1..=16"));
        }
        Ok(())
    }

    /// Learning-rate multiplier at global iteration `t` (1-based).
    pub fn lr_scale(&self, t: u32) -> f64 {
        if self.lr_decay_iteration > 0 && t >= self.lr_decay_iteration {
            self.lr_decay_factor
        } else {
            1.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;
    use proptest::prelude::*;

    #[test]
    fn materialize_examples() {
        let d = CovarianceParam::Direct {
            s11: 1.0,
            s12: 0.0,
            s22: 1.0,
        };
        assert_eq!(d.materialize(), Sym2::IDENTITY);

        let l = CovarianceParam::Cholesky {
            l11: 2.0,
            l21: 0.0,
            l22: 3.0,
        };
        assert_eq!(l.materialize(), Sym2::new(4.0, 0.0, 9.0));

        let rs = CovarianceParam::RotScale {
            theta: FRAC_PI_2,
            s1: 2.0,
            s2: 1.0,
        }
        .materialize();
        assert!((rs.xx - 1.0).abs() < 1e-12);
        assert!(rs.xy.abs() < 1e-12);
        assert!((rs.yy - 4.0).abs() < 1e-12);
    }

    #[test]
    fn psd_examples() {
        assert!(is_psd(&Sym2::IDENTITY));
        assert!(!is_psd(&Sym2::new(-1.0, 0.0, 1.0)));
        assert!(!is_psd(&Sym2::new(1.0, 2.0, 1.0)));
    }

    #[test]
    fn config_schedule_scaling() {
        assert_eq!(TrainConfig::for_iterations(50_000), TrainConfig::default());
        let c = TrainConfig::for_iterations(10_000);
        assert_eq!((c.grow_start, c.grow_interval, c.grow_stop), (1_000, 1_000, 9_000));
        assert_eq!(c.lr_decay_iteration, 4_000);
        c.validate().unwrap();
        TrainConfig::for_iterations(0).validate().unwrap();
        TrainConfig::for_iterations(3).validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_schedule() {
        let mut c = TrainConfig::default();
        c.grow_stop = 60_000;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.prune_interval = 0;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.max_gaussians = 1;
        assert_eq!(c.validate(), Err(Error::BudgetTooSmall(1)));
    }

    #[test]
    fn cloud_budget_enforced() {
        let mut cloud = GaussianCloud::new(Parameterization::Direct, 1).unwrap();
        let cov = CovarianceParam::Direct {
            s11: 1.0,
            s12: 0.0,
            s22: 1.0,
        };
        cloud.push([0.0, 0.0], cov, [0.0; 3], 0.0).unwrap();
        assert!(cloud.push([0.0, 0.0], cov, [0.0; 3], 0.0).is_err());
        assert_eq!(cloud.headroom(), 0);
    }

    #[test]
    fn crop_extracts_window() {
        let data = (0..4 * 5 * 3).map(|v| v as f64).collect();
        let img = ImagePlane::from_data(4, 5, data).unwrap();
        let c = img.crop(1, 2, 2, 3).unwrap();
        assert_eq!(c.pixel(0, 0), img.pixel(1, 2));
        assert_eq!(c.pixel(1, 2), img.pixel(2, 4));
        assert!(img.crop(3, 0, 2, 1).is_err());
    }

    proptest! {
        #[test]
        fn factored_variants_always_psd(
            a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, theta in -7.0f64..7.0,
        ) {
            let chol = CovarianceParam::Cholesky { l11: a, l21: b, l22: c }.materialize();
            let rs = CovarianceParam::RotScale { theta, s1: a, s2: c }.materialize();
            for m in [chol, rs] {
                let scale = (m.xx.abs() + m.yy.abs()).max(1.0);
                prop_assert!(m.xx >= 0.0 && m.yy >= 0.0);
                prop_assert!(m.det() >= -1e-12 * scale * scale);
            }
        }

        #[test]
        fn cholesky_recovers_matrix(
            l11 in 0.05f64..5.0, l21 in -5.0f64..5.0, l22 in 0.05f64..5.0,
        ) {
            let m = CovarianceParam::Cholesky { l11, l21, l22 }.materialize();
            let f = m.cholesky().unwrap();
            let back = CovarianceParam::Cholesky { l11: f[0], l21: f[1], l22: f[2] }.materialize();
            prop_assert!((back.xx - m.xx).abs() < 1e-10);
            prop_assert!((back.xy - m.xy).abs() < 1e-10);
            prop_assert!((back.yy - m.yy).abs() < 1e-10);
        }
    }
}
