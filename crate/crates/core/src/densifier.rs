//! Distortion-driven densification: sparse random initialization, periodic
//! growth at the worst-reconstructed pixels, and pruning of primitives whose
//! filtered covariance is not a valid covariance.

use alloc::vec::Vec;
use core::cmp::Ordering;
use core::f64::consts::TAU;

use rand::Rng as _;

use crate::caf::CafPolicy;
use crate::error::{Error, Result};
use crate::model::{is_psd, CovarianceParam, GaussianCloud, ImagePlane, Parameterization, TrainConfig};
use crate::Rng;

/// Per-pixel reconstruction error: mean absolute error over the channels.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DistortionMap {
    pub fn from_images(gt: &ImagePlane, rendered: &ImagePlane) -> Result<Self> {
        gt.ensure_same_dims(rendered)?;
        let values = gt
            .data()
            .chunks_exact(3)
            .zip(rendered.data().chunks_exact(3))
            .map(|(a, b)| {
                ((a[0] - b[0]).abs() + (a[1] - b[1]).abs() + (a[2] - b[2]).abs()) / 3.0
            })
            .collect();
        Ok(Self {
            height: gt.height(),
            width: gt.width(),
            values,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// The `k` highest-distortion pixels as `(row, col)`, in non-increasing
    /// distortion order; ties go to the lower row-major index.
    pub fn top_k(&self, k: usize) -> Vec<(usize, usize)> {
        let k = k.min(self.values.len());
        if k == 0 {
            return Vec::new();
        }
        let values = &self.values;
        let order = |a: &usize, b: &usize| -> Ordering {
            values[*b].total_cmp(&values[*a]).then(a.cmp(b))
        };
        let mut idx: Vec<usize> = (0..values.len()).collect();
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, order);
            idx.truncate(k);
        }
        idx.sort_unstable_by(order);
        idx.into_iter()
            .map(|i| (i / self.width, i % self.width))
            .collect()
    }
}

/// Draws an initial covariance: diagonal-like entries in `[0.5, 1)`,
/// off-diagonal in `[0, 1)`, angles in `[0, 2π)`.
pub fn sample_covariance(kind: Parameterization, rng: &mut Rng) -> CovarianceParam {
    match kind {
        Parameterization::Direct => {
            let s11 = rng.random_range(0.5..1.0);
            let s12 = rng.random_range(0.0..1.0);
            let s22 = rng.random_range(0.5..1.0);
            CovarianceParam::Direct { s11, s12, s22 }
        }
        Parameterization::Cholesky => {
            let l11 = rng.random_range(0.5..1.0);
            let l21 = rng.random_range(0.0..1.0);
            let l22 = rng.random_range(0.5..1.0);
            CovarianceParam::Cholesky { l11, l21, l22 }
        }
        Parameterization::RotScale => {
            let theta = rng.random_range(0.0..TAU);
            let s1 = rng.random_range(0.5..1.0);
            let s2 = rng.random_range(0.5..1.0);
            CovarianceParam::RotScale { theta, s1, s2 }
        }
    }
}

/// `count` primitives with uniform positions, sampled covariances and zero
/// colors, inside a cloud of budget `budget`.
pub fn random_init(
    count: usize,
    budget: usize,
    dims: (usize, usize),
    kind: Parameterization,
    filter: CafPolicy,
    rng: &mut Rng,
) -> Result<GaussianCloud> {
    let (height, width) = dims;
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimensions { height, width });
    }
    if count > budget {
        return Err(Error::InvalidConfig("initial count exceeds budget"));
    }
    let mut cloud = GaussianCloud::new(kind, budget)?;
    if count == 0 {
        return Ok(cloud);
    }
    let s = filter.variance_for_new(height, width, count)?;
    for _ in 0..count {
        let x = rng.random_range(0.0..width as f64);
        let y = rng.random_range(0.0..height as f64);
        let cov = sample_covariance(kind, rng);
        cloud.push([x, y], cov, [0.0; 3], s)?;
    }
    Ok(cloud)
}

/// Sparse initialization with `⌊M/2⌋` primitives.
pub fn sparse_init(
    budget: usize,
    dims: (usize, usize),
    kind: Parameterization,
    filter: CafPolicy,
    rng: &mut Rng,
) -> Result<GaussianCloud> {
    if budget < 2 {
        return Err(Error::BudgetTooSmall(budget));
    }
    random_init(budget / 2, budget, dims, kind, filter, rng)
}

/// Number of primitives added by one growth event: `⌊(M − N)/2⌋`.
pub fn growth_count(count: usize, budget: usize) -> usize {
    budget.saturating_sub(count) / 2
}

/// Whether a growth event fires after iteration `t`.
pub fn is_growth_iteration(t: u32, cfg: &TrainConfig) -> bool {
    cfg.enable_densification
        && t >= cfg.grow_start
        && t <= cfg.grow_stop
        && t > 0
        && (t - cfg.grow_start) % cfg.grow_interval == 0
}

/// Whether pruning fires after iteration `t`.
pub fn is_prune_iteration(t: u32, cfg: &TrainConfig) -> bool {
    cfg.enable_densification && t > 0 && t % cfg.prune_interval == 0
}

/// Adds `growth_count` primitives at the top-k distortion pixel centers with
/// the ground-truth colors there. Returns the number added.
pub fn grow(
    cloud: &mut GaussianCloud,
    gt: &ImagePlane,
    rendered: &ImagePlane,
    filter: CafPolicy,
    rng: &mut Rng,
) -> Result<usize> {
    let k = growth_count(cloud.len(), cloud.max_budget());
    if k == 0 {
        return Ok(0);
    }
    let distortion = DistortionMap::from_images(gt, rendered)?;
    let pixels = distortion.top_k(k);
    let s = filter.variance_for_new(gt.height(), gt.width(), cloud.len() + pixels.len())?;
    for &(row, col) in &pixels {
        let cov = sample_covariance(cloud.kind(), rng);
        cloud.push(
            [col as f64 + 0.5, row as f64 + 0.5],
            cov,
            gt.pixel(row, col),
            s,
        )?;
    }
    Ok(pixels.len())
}

/// `true` for primitives whose filtered covariance is PSD with `det > 0`.
pub fn valid_mask(cloud: &GaussianCloud) -> Vec<bool> {
    (0..cloud.len())
        .map(|i| {
            let s = cloud.filtered_covariance(i);
            is_psd(&s) && s.det() > 0.0
        })
        .collect()
}

/// Removes primitives with an invalid filtered covariance, preserving the
/// order of the survivors. Returns the keep mask.
pub fn prune_with_mask(cloud: &mut GaussianCloud) -> Vec<bool> {
    let keep = valid_mask(cloud);
    if keep.iter().any(|k| !k) {
        cloud.retain_mask(&keep);
    }
    keep
}

/// Removes invalid primitives; returns how many were removed.
pub fn prune(cloud: &mut GaussianCloud) -> usize {
    prune_with_mask(cloud).iter().filter(|k| !**k).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rasterizer::render;
    use crate::seeded_rng;
    use alloc::vec;

    const ADAPTIVE: CafPolicy = CafPolicy::Adaptive { alpha: 32.0 };

    #[test]
    fn sparse_init_counts() {
        let mut rng = seeded_rng(1);
        let c = sparse_init(10_000, (64, 48), Parameterization::Direct, ADAPTIVE, &mut rng).unwrap();
        assert_eq!(c.len(), 5_000);
        assert_eq!(c.max_budget(), 10_000);
        let c = sparse_init(2, (4, 4), Parameterization::Direct, ADAPTIVE, &mut rng).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.colors()[0], [0.0; 3]);
        assert!(sparse_init(1, (4, 4), Parameterization::Direct, ADAPTIVE, &mut rng).is_err());
    }

    #[test]
    fn sparse_init_ranges() {
        let mut rng = seeded_rng(3);
        for kind in Parameterization::ALL {
            let c = sparse_init(400, (30, 50), kind, ADAPTIVE, &mut rng).unwrap();
            for (p, raw) in c.positions().iter().zip(c.cov_params()) {
                assert!((0.0..50.0).contains(&p[0]) && (0.0..30.0).contains(&p[1]));
                match kind {
                    Parameterization::RotScale => {
                        assert!((0.0..TAU).contains(&raw[0]));
                        assert!((0.5..1.0).contains(&raw[1]) && (0.5..1.0).contains(&raw[2]));
                    }
                    _ => {
                        assert!((0.5..1.0).contains(&raw[0]) && (0.5..1.0).contains(&raw[2]));
                        assert!((0.0..1.0).contains(&raw[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn sparse_init_is_deterministic() {
        let a = sparse_init(10, (8, 8), Parameterization::Direct, ADAPTIVE, &mut seeded_rng(42)).unwrap();
        let b = sparse_init(10, (8, 8), Parameterization::Direct, ADAPTIVE, &mut seeded_rng(42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn growth_count_floor() {
        assert_eq!(growth_count(5_000, 10_000), 2_500);
        assert_eq!(growth_count(10_000, 10_000), 0);
        assert_eq!(growth_count(9_999, 10_000), 0);
    }

    #[test]
    fn growth_schedule_default() {
        let cfg = TrainConfig::default();
        let events: Vec<u32> = (0..=cfg.total_iterations)
            .filter(|&t| is_growth_iteration(t, &cfg))
            .collect();
        assert_eq!(events, vec![5_000, 10_000, 15_000, 20_000, 25_000, 30_000, 35_000, 40_000, 45_000]);
        let prunes = (0..=cfg.total_iterations).filter(|&t| is_prune_iteration(t, &cfg)).count();
        assert_eq!(prunes, 500);
    }

    #[test]
    fn top_k_order_and_ties() {
        let gt = ImagePlane::from_data(2, 3, vec![
            0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5,
            0.0, 0.0, 0.0, 0.9, 0.9, 0.9, 0.5, 0.5, 0.5,
        ])
        .unwrap();
        let zero = ImagePlane::zeros(2, 3).unwrap();
        let d = DistortionMap::from_images(&gt, &zero).unwrap();
        assert_eq!(d.top_k(4), vec![(1, 1), (0, 1), (0, 2), (1, 2)]);
        assert_eq!(d.top_k(100).len(), 6);
        assert_eq!(d.top_k(6)[4..], [(0, 0), (1, 0)]);
    }

    #[test]
    fn grow_at_single_bright_pixel() {
        let mut gt = ImagePlane::zeros(5, 5).unwrap();
        gt.set_pixel(3, 1, [0.9, 0.2, 0.4]);
        let rendered = ImagePlane::zeros(5, 5).unwrap();
        let mut cloud = GaussianCloud::new(Parameterization::Direct, 4).unwrap();
        let cov = CovarianceParam::Direct { s11: 1.0, s12: 0.0, s22: 1.0 };
        for _ in 0..2 {
            cloud.push([0.0; 2], cov, [0.0; 3], 1.0).unwrap();
        }
        let added = grow(&mut cloud, &gt, &rendered, ADAPTIVE, &mut seeded_rng(0)).unwrap();
        assert_eq!(added, 1);
        assert_eq!(cloud.positions()[2], [1.5, 3.5]);
        assert_eq!(cloud.colors()[2], [0.9, 0.2, 0.4]);
        assert_eq!(cloud.filter_variances()[2], 25.0 / (32.0 * 3.0));
    }

    #[test]
    fn grow_with_perfect_reconstruction_uses_tie_break() {
        let gt = ImagePlane::from_data(2, 2, (0..12).map(|v| v as f64 / 12.0).collect()).unwrap();
        let mut cloud = GaussianCloud::new(Parameterization::Direct, 4).unwrap();
        let added = grow(&mut cloud, &gt, &gt, ADAPTIVE, &mut seeded_rng(0)).unwrap();
        assert_eq!(added, 2);
        assert_eq!(cloud.positions(), &[[0.5, 0.5], [1.5, 0.5]]);
        assert_eq!(cloud.colors()[1], gt.pixel(0, 1));
    }

    #[test]
    fn grow_noop_when_full() {
        let gt = ImagePlane::zeros(3, 3).unwrap();
        let mut cloud = sparse_init(2, (3, 3), Parameterization::Direct, ADAPTIVE, &mut seeded_rng(0)).unwrap();
        let mut full = cloud.clone();
        grow(&mut full, &gt, &gt, ADAPTIVE, &mut seeded_rng(0)).unwrap();
        let before = full.clone();
        assert_eq!(grow(&mut full, &gt, &gt, ADAPTIVE, &mut seeded_rng(0)).unwrap(), 0);
        assert_eq!(full, before);
        assert_eq!(grow(&mut cloud, &gt, &gt, ADAPTIVE, &mut seeded_rng(0)).unwrap(), 0);
    }

    #[test]
    fn prune_examples() {
        let mut cloud = GaussianCloud::new(Parameterization::Direct, 8).unwrap();
        let ident = CovarianceParam::Direct { s11: 1.0, s12: 0.0, s22: 1.0 };
        for i in 0..3 {
            cloud.push([i as f64, 0.0], ident, [1.0; 3], 0.0).unwrap();
        }
        assert_eq!(prune(&mut cloud), 0);
        cloud
            .push([1.0, 1.0], CovarianceParam::Direct { s11: 1.0, s12: 2.0, s22: 1.0 }, [1.0; 3], 0.0)
            .unwrap();
        cloud.push([7.0, 7.0], ident, [0.5; 3], 0.0).unwrap();
        let before = render(&cloud, (8, 8), f64::INFINITY).unwrap();
        assert_eq!(prune(&mut cloud), 1);
        assert_eq!(cloud.len(), 4);
        assert_eq!(cloud.positions()[3], [7.0, 7.0]);
        let after = render(&cloud, (8, 8), f64::INFINITY).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn prune_uses_filtered_covariance() {
        let mut cloud = GaussianCloud::new(Parameterization::Direct, 2).unwrap();
        // raw det = 1·1 − 1.2² < 0, filtered det = 2·2 − 1.44 > 0
        cloud
            .push([0.0; 2], CovarianceParam::Direct { s11: 1.0, s12: 1.2, s22: 1.0 }, [1.0; 3], 1.0)
            .unwrap();
        assert_eq!(prune(&mut cloud), 0);
    }

    #[test]
    fn factored_clouds_survive_prune() {
        let mut rng = seeded_rng(9);
        for kind in [Parameterization::Cholesky, Parameterization::RotScale] {
            let mut c = sparse_init(500, (20, 20), kind, CafPolicy::Constant(0.0), &mut rng).unwrap();
            assert_eq!(prune(&mut c), 0);
        }
    }
}
