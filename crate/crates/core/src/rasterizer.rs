//! Accumulated-sum rasterization of a [`GaussianCloud`].
//!
//! Every pixel center `x = (col + 0.5, row + 0.5)` receives
//! `C(x) = Σ_i c_i · exp(−½ dᵀ A_i d)` with `d = x − μ_i` and
//! `A_i = (Σ_i + s_i I)⁻¹`. There is no opacity, ordering or normalization,
//! so the image is linear in the colors and primitives superpose.
//!
//! Primitives whose filtered covariance fails [`is_psd`] or is singular
//! contribute nothing and receive zero gradients. A primitive only touches
//! pixels inside its axis-aligned box of `cutoff_sigmas` standard deviations
//! per axis, and inside that box only pixels with `dᵀ A d ≤ cutoff²`. Both
//! skips discard footprint values below `exp(−cutoff²/2)`.
//!
//! The forward pass splits the image into fixed row bands and accumulates
//! each pixel in primitive index order; the backward pass is computed
//! independently per primitive. Neither depends on the number of worker
//! threads, so results are bit-reproducible for any worker count.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::{is_psd, GaussianCloud, ImagePlane, Sym2};

/// Default footprint cutoff in standard deviations.
pub const DEFAULT_CUTOFF_SIGMAS: f64 = 6.0;

const BAND_ROWS: usize = 16;

/// Gradients of `⟨∂L/∂image, render(cloud)⟩` w.r.t. each primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderGradients {
    pub d_position: Vec<[f64; 2]>,
    /// W.r.t. the filtered covariance `(Σ'11, Σ'12, Σ'22)`, with the
    /// off-diagonal treated as one symmetric parameter.
    pub d_covariance: Vec<[f64; 3]>,
    pub d_color: Vec<[f64; 3]>,
}

impl RenderGradients {
    pub fn zeros(n: usize) -> Self {
        Self {
            d_position: vec![[0.0; 2]; n],
            d_covariance: vec![[0.0; 3]; n],
            d_color: vec![[0.0; 3]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.d_position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.d_position.is_empty()
    }

    /// Chain rule from the filtered covariance entries onto the cloud's raw
    /// covariance parameters. The filter variance is constant, so
    /// `∂Σ'/∂Σ` is the identity.
    pub fn covariance_param_gradients(&self, cloud: &GaussianCloud) -> Vec<[f64; 3]> {
        self.d_covariance
            .iter()
            .enumerate()
            .map(|(i, g)| cloud.covariance(i).pullback(*g))
            .collect()
    }
}

/// A renderable primitive with its precomputed inverse and pixel window.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    index: usize,
    mean: [f64; 2],
    inv: Sym2,
    color: [f64; 3],
    cols: (usize, usize),
    rows: (usize, usize),
    max_q: f64,
}

/// Half-open pixel index range whose centers lie within `center ± radius`.
fn pixel_span(center: f64, radius: f64, len: usize) -> (usize, usize) {
    if radius.is_infinite() {
        return (0, len);
    }
    let lo = math::ceil(center - radius - 0.5);
    let hi = math::floor(center + radius - 0.5);
    if !(hi >= 0.0) || !(lo <= (len - 1) as f64) || hi < lo {
        return (0, 0);
    }
    let lo = if lo < 0.0 { 0 } else { lo as usize };
    let hi = if hi > (len - 1) as f64 { len - 1 } else { hi as usize };
    (lo, hi + 1)
}

fn footprint(cloud: &GaussianCloud, i: usize, height: usize, width: usize, cutoff: f64) -> Option<Footprint> {
    let sigma = cloud.filtered_covariance(i);
    if !is_psd(&sigma) || !(sigma.det() > 0.0) {
        return None;
    }
    let inv = sigma.inverse()?;
    let mean = cloud.positions[i];
    if !mean[0].is_finite() || !mean[1].is_finite() {
        return None;
    }
    let cols = pixel_span(mean[0], cutoff * math::sqrt(sigma.xx), width);
    let rows = pixel_span(mean[1], cutoff * math::sqrt(sigma.yy), height);
    if cols.0 >= cols.1 || rows.0 >= rows.1 {
        return None;
    }
    Some(Footprint {
        index: i,
        mean,
        inv,
        color: cloud.colors[i],
        cols,
        rows,
        max_q: cutoff * cutoff,
    })
}

impl Footprint {
    /// Columns of the row at offset `dy` that may pass the cutoff test,
    /// widened by one pixel on each side.
    #[inline]
    fn row_cols(&self, dy: f64, width: usize) -> (usize, usize) {
        if self.max_q.is_infinite() {
            return self.cols;
        }
        let a = self.inv.xx;
        let b = self.inv.xy * dy;
        let disc = (b * b - a * (self.inv.yy * dy * dy - self.max_q)).max(0.0);
        let (lo, hi) = pixel_span(self.mean[0] - b / a, math::sqrt(disc) / a + 1.0, width);
        (lo.max(self.cols.0), hi.min(self.cols.1))
    }
}

fn footprints(cloud: &GaussianCloud, height: usize, width: usize, cutoff: f64) -> Vec<Footprint> {
    (0..cloud.len())
        .filter_map(|i| footprint(cloud, i, height, width, cutoff))
        .collect()
}

#[inline(always)]
fn quad_form(inv: &Sym2, dx: f64, dy: f64) -> f64 {
    inv.xx * dx * dx + 2.0 * inv.xy * dx * dy + inv.yy * dy * dy
}

fn check_args(height: usize, width: usize, cutoff_sigmas: f64) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidDimensions { height, width });
    }
    if !(cutoff_sigmas > 0.0) {
        return Err(Error::InvalidConfig("cutoff_sigmas must be positive"));
    }
    Ok(())
}

fn splat_band(prims: &[Footprint], band: &mut [f64], row0: usize, width: usize) {
    let rows_in_band = band.len() / (width * 3);
    let row1 = row0 + rows_in_band;
    for p in prims {
        let r0 = p.rows.0.max(row0);
        let r1 = p.rows.1.min(row1);
        if r0 >= r1 {
            continue;
        }
        for row in r0..r1 {
            let dy = row as f64 + 0.5 - p.mean[1];
            let line = &mut band[(row - row0) * width * 3..(row - row0 + 1) * width * 3];
            let (c0, c1) = p.row_cols(dy, width);
            for col in c0..c1 {
                let dx = col as f64 + 0.5 - p.mean[0];
                let q = quad_form(&p.inv, dx, dy);
                if q > p.max_q {
                    continue;
                }
                let g = math::exp(-0.5 * q);
                let px = &mut line[col * 3..col * 3 + 3];
                px[0] += p.color[0] * g;
                px[1] += p.color[1] * g;
                px[2] += p.color[2] * g;
            }
        }
    }
}

/// Renders `cloud` onto an `H × W` plane. Pass `f64::INFINITY` as
/// `cutoff_sigmas` to evaluate every primitive at every pixel.
pub fn render(cloud: &GaussianCloud, dims: (usize, usize), cutoff_sigmas: f64) -> Result<ImagePlane> {
    let (height, width) = dims;
    check_args(height, width, cutoff_sigmas)?;
    let prims = footprints(cloud, height, width, cutoff_sigmas);
    let mut image = ImagePlane::zeros(height, width)?;
    let band_len = BAND_ROWS * width * 3;

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        image
            .data_mut()
            .par_chunks_mut(band_len)
            .enumerate()
            .for_each(|(b, band)| splat_band(&prims, band, b * BAND_ROWS, width));
    }
    #[cfg(not(feature = "parallel"))]
    {
        image
            .data_mut()
            .chunks_mut(band_len)
            .enumerate()
            .for_each(|(b, band)| splat_band(&prims, band, b * BAND_ROWS, width));
    }
    Ok(image)
}

fn footprint_gradient(p: &Footprint, upstream: &[f64], width: usize) -> ([f64; 2], [f64; 3], [f64; 3]) {
    let mut d_pos = [0.0; 2];
    let mut d_cov = [0.0; 3];
    let mut d_col = [0.0; 3];
    let inv = p.inv;
    for row in p.rows.0..p.rows.1 {
        let dy = row as f64 + 0.5 - p.mean[1];
        let line = &upstream[row * width * 3..(row + 1) * width * 3];
        let (c0, c1) = p.row_cols(dy, width);
        for col in c0..c1 {
            let dx = col as f64 + 0.5 - p.mean[0];
            let q = quad_form(&inv, dx, dy);
            if q > p.max_q {
                continue;
            }
            let g = math::exp(-0.5 * q);
            let up = &line[col * 3..col * 3 + 3];
            d_col[0] += up[0] * g;
            d_col[1] += up[1] * g;
            d_col[2] += up[2] * g;
            let wg = (up[0] * p.color[0] + up[1] * p.color[1] + up[2] * p.color[2]) * g;
            let ax = inv.xx * dx + inv.xy * dy;
            let ay = inv.xy * dx + inv.yy * dy;
            d_pos[0] += wg * ax;
            d_pos[1] += wg * ay;
            d_cov[0] += 0.5 * wg * ax * ax;
            d_cov[1] += wg * ax * ay;
            d_cov[2] += 0.5 * wg * ay * ay;
        }
    }
    (d_pos, d_cov, d_col)
}

/// Analytic gradients of `Σ_x ⟨d_loss_d_pixels(x), C(x)⟩`.
///
/// Uses the same skip rules as [`render`] with the same `cutoff_sigmas`.
pub fn render_backward(
    cloud: &GaussianCloud,
    dims: (usize, usize),
    d_loss_d_pixels: &ImagePlane,
    cutoff_sigmas: f64,
) -> Result<RenderGradients> {
    let (height, width) = dims;
    check_args(height, width, cutoff_sigmas)?;
    if d_loss_d_pixels.dims() != dims {
        return Err(Error::DimensionMismatch {
            left_height: height,
            left_width: width,
            right_height: d_loss_d_pixels.height(),
            right_width: d_loss_d_pixels.width(),
        });
    }
    let prims = footprints(cloud, height, width, cutoff_sigmas);
    let upstream = d_loss_d_pixels.data();

    #[cfg(feature = "parallel")]
    let partials: Vec<_> = {
        use rayon::prelude::*;
        prims
            .par_iter()
            .map(|p| footprint_gradient(p, upstream, width))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let partials: Vec<_> = prims
        .iter()
        .map(|p| footprint_gradient(p, upstream, width))
        .collect();

    let mut grads = RenderGradients::zeros(cloud.len());
    for (p, (d_pos, d_cov, d_col)) in prims.iter().zip(partials) {
        grads.d_position[p.index] = d_pos;
        grads.d_covariance[p.index] = d_cov;
        grads.d_color[p.index] = d_col;
    }
    Ok(grads)
}

/// Reference renderer: every primitive at every pixel, no cutoff, no
/// banding, no parallelism. The quadratic form is evaluated through the
/// adjugate rather than a precomputed inverse.
pub fn render_naive(cloud: &GaussianCloud, dims: (usize, usize)) -> Result<ImagePlane> {
    let (height, width) = dims;
    check_args(height, width, 1.0)?;
    let mut image = ImagePlane::zeros(height, width)?;
    for row in 0..height {
        for col in 0..width {
            let x = col as f64 + 0.5;
            let y = row as f64 + 0.5;
            let mut acc = [0.0f64; 3];
            for i in 0..cloud.len() {
                let s = cloud.filtered_covariance(i);
                let det = s.xx * s.yy - s.xy * s.xy;
                if !(det > 0.0) || s.xx < 0.0 || s.yy < 0.0 {
                    continue;
                }
                let [mx, my] = cloud.positions()[i];
                let (dx, dy) = (x - mx, y - my);
                let q = (s.yy * dx * dx - 2.0 * s.xy * dx * dy + s.xx * dy * dy) / det;
                let g = math::exp(-0.5 * q);
                let c = cloud.colors()[i];
                acc[0] += c[0] * g;
                acc[1] += c[1] * g;
                acc[2] += c[2] * g;
            }
            image.set_pixel(row, col, acc);
        }
    }
    Ok(image)
}

/// Per-pixel total footprint weight `Σ_i g_i(x)`, row-major.
pub fn accumulated_weight(cloud: &GaussianCloud, dims: (usize, usize), cutoff_sigmas: f64) -> Result<Vec<f64>> {
    let mut unit = cloud.clone();
    unit.colors_mut().iter_mut().for_each(|c| *c = [1.0, 0.0, 0.0]);
    let image = render(&unit, dims, cutoff_sigmas)?;
    Ok(image.data().chunks_exact(3).map(|px| px[0]).collect())
}
