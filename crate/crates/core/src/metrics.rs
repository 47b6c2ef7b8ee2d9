//! PSNR and multi-scale SSIM on `[0, 1]` images.
//!
//! Both metrics expect clamped floating point inputs; no 8-bit rounding is
//! applied.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::model::ImagePlane;

/// MS-SSIM scale weights, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const WINDOW: usize = 11;
const WINDOW_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Summary of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QualityReport {
    pub psnr: f64,
    pub ms_ssim: f64,
    pub bpp: Option<f64>,
    pub encode_seconds: Option<f64>,
    pub decode_fps: Option<f64>,
}

pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10·log10(1/MSE)` in dB; `+∞` for identical images.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * math::log10(mse))
}

/// Number of dyadic scales an `H × W` image supports, capped at five.
pub fn ms_ssim_scales(height: usize, width: usize) -> usize {
    let mut side = height.min(width);
    let mut scales = 0;
    while side >= WINDOW && scales < MS_SSIM_WEIGHTS.len() {
        scales += 1;
        side /= 2;
    }
    scales
}

fn gaussian_window() -> [f64; WINDOW] {
    let mut w = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = math::exp(-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA));
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// One channel as a dense row-major buffer.
#[derive(Clone)]
struct Channel {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Channel {
    fn from_plane(img: &ImagePlane, c: usize) -> Self {
        Self {
            height: img.height(),
            width: img.width(),
            data: img.data().iter().skip(c).step_by(3).copied().collect(),
        }
    }

    fn zip_map(&self, other: &Channel, f: impl Fn(f64, f64) -> f64) -> Channel {
        Channel {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// Separable "valid" filtering with the Gaussian window.
    fn filter_valid(&self, w: &[f64; WINDOW]) -> Channel {
        let ow = self.width - WINDOW + 1;
        let oh = self.height - WINDOW + 1;
        let mut horiz = vec![0.0; self.height * ow];
        for r in 0..self.height {
            let row = &self.data[r * self.width..(r + 1) * self.width];
            for c in 0..ow {
                horiz[r * ow + c] = w.iter().zip(&row[c..c + WINDOW]).map(|(a, b)| a * b).sum();
            }
        }
        let mut out = vec![0.0; oh * ow];
        for r in 0..oh {
            for c in 0..ow {
                let mut acc = 0.0;
                for (k, wk) in w.iter().enumerate() {
                    acc += wk * horiz[(r + k) * ow + c];
                }
                out[r * ow + c] = acc;
            }
        }
        Channel {
            height: oh,
            width: ow,
            data: out,
        }
    }

    /// 2×2 average pooling, odd trailing row/column dropped.
    fn downsample(&self) -> Channel {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut data = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let i = 2 * r * self.width + 2 * c;
                data.push(
                    0.25 * (self.data[i]
                        + self.data[i + 1]
                        + self.data[i + self.width]
                        + self.data[i + self.width + 1]),
                );
            }
        }
        Channel {
            height: h,
            width: w,
            data,
        }
    }
}

/// Mean SSIM and mean contrast-structure term of one channel at one scale.
fn ssim_terms(x: &Channel, y: &Channel, w: &[f64; WINDOW]) -> (f64, f64) {
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let mu_x = x.filter_valid(w);
    let mu_y = y.filter_valid(w);
    let xx = x.zip_map(x, |a, b| a * b).filter_valid(w);
    let yy = y.zip_map(y, |a, b| a * b).filter_valid(w);
    let xy = x.zip_map(y, |a, b| a * b).filter_valid(w);
    let n = mu_x.data.len() as f64;
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_x.data.len() {
        let (mx, my) = (mu_x.data[i], mu_y.data[i]);
        let var_x = xx.data[i] - mx * mx;
        let var_y = yy.data[i] - my * my;
        let cov = xy.data[i] - mx * my;
        let cs = (2.0 * cov + c2) / (var_x + var_y + c2);
        let lum = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
        cs_sum += cs;
        ssim_sum += lum * cs;
    }
    (ssim_sum / n, cs_sum / n)
}

/// Multi-scale SSIM, averaged over the three channels.
///
/// Uses an 11×11 Gaussian window (σ = 1.5), `K1 = 0.01`, `K2 = 0.03` and
/// the standard five scale weights. Images too small for five scales use as
/// many scales as keep an 11×11 support, with the leading weights
/// renormalized to sum to one. Negative per-scale terms are clamped to zero
/// so the result stays in `[0, 1]`.
pub fn ms_ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    a.ensure_same_dims(b)?;
    let scales = ms_ssim_scales(a.height(), a.width());
    if scales == 0 {
        return Err(Error::ImageTooSmall {
            height: a.height(),
            width: a.width(),
        });
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    let total: f64 = weights.iter().sum();
    let window = gaussian_window();
    let mut acc = 0.0;
    for c in 0..3 {
        let mut x = Channel::from_plane(a, c);
        let mut y = Channel::from_plane(b, c);
        let mut value = 1.0;
        for (s, weight) in weights.iter().enumerate() {
            let (ssim, cs) = ssim_terms(&x, &y, &window);
            let term = if s + 1 == scales { ssim } else { cs };
            value *= math::powf(term.max(0.0), weight / total);
            if s + 1 < scales {
                x = x.downsample();
                y = y.downsample();
            }
        }
        acc += value;
    }
    Ok((acc / 3.0).clamp(0.0, 1.0))
}
