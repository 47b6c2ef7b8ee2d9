//! Attribute-separated learnable scalar quantizers and quantization-aware
//! fine-tuning.
//!
//! Each of the eight stored channels (position x/y, filtered covariance
//! entries, RGB) has its own uniform quantizer with a learnable step `s_q`
//! and offset `β`:
//!
//! ```text
//! code = round_half_even(clip((v′ − β) / s_q, 0, 2^b − 1))
//! v̂′   = code · s_q + β
//! ```
//!
//! where `v′ = v` for linear channels and `v′ = ln v` for the two variance
//! channels. Training uses the straight-through estimator for the rounding.

use alloc::vec::Vec;

use crate::densifier;
use crate::error::{Error, Result};
use crate::math;
use crate::metrics;
use crate::model::{is_psd, CovarianceParam, GaussianCloud, ImagePlane, Parameterization, Sym2};
use crate::rasterizer::{render, render_backward};
use crate::trainer::{l2_loss, AdamHyper, FitReport, LogRecord, Moments, Trainer};

const MIN_SCALE: f64 = 1e-8;

/// Whether a channel is quantized in value or log space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum QuantDomain {
    Linear,
    Log,
}

/// Gradients returned by [`LsqChannelQuantizer::fake_quant_backward`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FakeQuantGrad {
    pub d_value: f64,
    pub d_scale: f64,
    pub d_offset: f64,
}

/// Learnable uniform quantizer for one attribute channel.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LsqChannelQuantizer {
    bits: u8,
    scale: f64,
    offset: f64,
    domain: QuantDomain,
}

impl LsqChannelQuantizer {
    /// Unit step, zero offset.
    pub fn new(bits: u8, domain: QuantDomain) -> Result<Self> {
        Self::with_params(bits, 1.0, 0.0, domain)
    }

    pub fn with_params(bits: u8, scale: f64, offset: f64, domain: QuantDomain) -> Result<Self> {
        if bits == 0 || bits > 16 {
            return Err(Error::InvalidBitDepth(bits));
        }
        if !scale.is_finite() || !offset.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            bits,
            scale: scale.max(MIN_SCALE),
            offset,
            domain,
        })
    }

    pub fn bits(&self) -> u8 {
        self.bits
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn domain(&self) -> QuantDomain {
        self.domain
    }

    /// Largest code, `2^b − 1`.
    pub fn max_code(&self) -> u32 {
        (1u32 << self.bits) - 1
    }

    fn to_domain(&self, v: f64) -> Result<f64> {
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        match self.domain {
            QuantDomain::Linear => Ok(v),
            QuantDomain::Log if v > 0.0 => Ok(math::ln(v)),
            QuantDomain::Log => Err(Error::LogDomain(v)),
        }
    }

    fn from_domain(&self, w: f64) -> f64 {
        match self.domain {
            QuantDomain::Linear => w,
            QuantDomain::Log => math::exp(w),
        }
    }

    /// Lattice position `(v′ − β)/s_q` before clipping.
    fn lattice_coordinate(&self, v: f64) -> Result<f64> {
        Ok((self.to_domain(v)? - self.offset) / self.scale)
    }

    pub fn quantize(&self, v: f64) -> Result<u32> {
        let u = self.lattice_coordinate(v)?;
        let clipped = u.clamp(0.0, self.max_code() as f64);
        Ok(math::round_ties_even(clipped) as u32)
    }

    pub fn dequantize(&self, code: u32) -> Result<f64> {
        if code > self.max_code() {
            return Err(Error::CodeOutOfRange {
                code,
                bits: self.bits,
            });
        }
        Ok(self.from_domain(code as f64 * self.scale + self.offset))
    }

    /// `dequantize(quantize(v))`.
    pub fn fake_quant(&self, v: f64) -> Result<f64> {
        self.dequantize(self.quantize(v)?)
    }

    /// Straight-through gradients of the dequantized lattice value
    /// `code·s_q + β` (in the channel's domain) given its upstream gradient.
    ///
    /// In range the rounding is treated as identity: the value gradient
    /// passes through (times `1/v` in the log domain) and the step receives
    /// `round(u) − u`. Below range only `β` is live; above range the step
    /// receives `2^b − 1` and `β` receives the upstream gradient.
    pub fn fake_quant_backward(&self, v: f64, upstream: f64) -> Result<FakeQuantGrad> {
        let u = self.lattice_coordinate(v)?;
        let q_max = self.max_code() as f64;
        Ok(if u < 0.0 {
            FakeQuantGrad {
                d_value: 0.0,
                d_scale: 0.0,
                d_offset: upstream,
            }
        } else if u > q_max {
            FakeQuantGrad {
                d_value: 0.0,
                d_scale: upstream * q_max,
                d_offset: upstream,
            }
        } else {
            let dv = match self.domain {
                QuantDomain::Linear => 1.0,
                QuantDomain::Log => 1.0 / v,
            };
            FakeQuantGrad {
                d_value: upstream * dv,
                d_scale: upstream * (math::round_ties_even(u) - u),
                d_offset: 0.0,
            }
        })
    }

    /// Min/max initialization: `β = min v′`, `s_q = (max v′ − min v′)/(2^b − 1)`.
    pub fn calibrate(&mut self, values: &[f64]) -> Result<()> {
        if values.is_empty() {
            return Err(Error::EmptyCalibration);
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in values {
            let w = self.to_domain(v)?;
            lo = lo.min(w);
            hi = hi.max(w);
        }
        self.offset = lo;
        self.scale = ((hi - lo) / self.max_code() as f64).max(MIN_SCALE);
        Ok(())
    }

    /// Applies a parameter update and re-imposes `s_q ≥ 1e-8`.
    pub fn set_params(&mut self, scale: f64, offset: f64) {
        self.scale = scale.max(MIN_SCALE);
        self.offset = offset;
    }

    /// Rounds `s_q` and `β` to the nearest `f32`, the precision stored in
    /// the bitstream.
    pub fn round_to_f32(&mut self) {
        let mut scale = self.scale as f32;
        if (scale as f64) < MIN_SCALE {
            scale = scale.next_up();
        }
        self.scale = scale as f64;
        self.offset = self.offset as f32 as f64;
    }
}

/// Names of the eight quantized channels, in storage order.
pub const CHANNEL_NAMES: [&str; 8] = ["mu_x", "mu_y", "sigma_11", "sigma_12", "sigma_22", "r", "g", "b"];

/// The default `(position, covariance, color)` bit depths.
pub const DEFAULT_BIT_DEPTHS: [u8; 3] = [12, 10, 6];

/// One quantizer per stored channel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantizerBank {
    channels: [LsqChannelQuantizer; 8],
}

impl Default for QuantizerBank {
    fn default() -> Self {
        Self::new(DEFAULT_BIT_DEPTHS).expect("default bit depths are valid")
    }
}

impl QuantizerBank {
    /// Bank with `[position, covariance, color]` bit depths; the two
    /// variance channels use the log domain.
    pub fn new(bit_depths: [u8; 3]) -> Result<Self> {
        let [bp, bs, bc] = bit_depths;
        use QuantDomain::{Linear, Log};
        Ok(Self {
            channels: [
                LsqChannelQuantizer::new(bp, Linear)?,
                LsqChannelQuantizer::new(bp, Linear)?,
                LsqChannelQuantizer::new(bs, Log)?,
                LsqChannelQuantizer::new(bs, Linear)?,
                LsqChannelQuantizer::new(bs, Log)?,
                LsqChannelQuantizer::new(bc, Linear)?,
                LsqChannelQuantizer::new(bc, Linear)?,
                LsqChannelQuantizer::new(bc, Linear)?,
            ],
        })
    }

    /// Rebuilds a bank from explicit channels; domains and per-group bit
    /// depths must match the layout produced by [`QuantizerBank::new`].
    pub fn from_channels(channels: [LsqChannelQuantizer; 8]) -> Result<Self> {
        let template = Self::new([channels[0].bits, channels[2].bits, channels[5].bits])?;
        for (c, t) in channels.iter().zip(&template.channels) {
            if c.bits != t.bits || c.domain != t.domain {
                return Err(Error::InvalidConfig("quantizer bank layout mismatch"));
            }
        }
        Ok(Self { channels })
    }

    pub fn channels(&self) -> &[LsqChannelQuantizer; 8] {
        &self.channels
    }

    pub fn channel_mut(&mut self, i: usize) -> &mut LsqChannelQuantizer {
        &mut self.channels[i]
    }

    /// `[position, covariance, color]` bit depths.
    pub fn bit_depths(&self) -> [u8; 3] {
        [self.channels[0].bits, self.channels[2].bits, self.channels[5].bits]
    }

    /// Payload bits per primitive, `2·b_μ + 3·b_Σ + 3·b_c`.
    pub fn bits_per_primitive(&self) -> usize {
        self.channels.iter().map(|c| c.bits as usize).sum()
    }

    /// Min/max calibration of every channel against the cloud's stored
    /// attributes.
    pub fn calibrate(&mut self, cloud: &GaussianCloud) -> Result<()> {
        let attrs: Vec<[f64; 8]> = (0..cloud.len()).map(|i| stored_attributes(cloud, i)).collect();
        for (c, q) in self.channels.iter_mut().enumerate() {
            let values: Vec<f64> = attrs.iter().map(|a| a[c]).collect();
            q.calibrate(&values)?;
        }
        Ok(())
    }

    pub fn quantize(&self, attrs: &[f64; 8]) -> Result<[u32; 8]> {
        let mut codes = [0u32; 8];
        for ((code, q), v) in codes.iter_mut().zip(&self.channels).zip(attrs) {
            *code = q.quantize(*v)?;
        }
        Ok(codes)
    }

    pub fn dequantize(&self, codes: &[u32; 8]) -> Result<[f64; 8]> {
        let mut out = [0.0; 8];
        for ((o, q), c) in out.iter_mut().zip(&self.channels).zip(codes) {
            *o = q.dequantize(*c)?;
        }
        Ok(out)
    }

    pub fn round_to_f32(&mut self) {
        self.channels.iter_mut().for_each(|c| c.round_to_f32());
    }
}

/// The eight stored values of primitive `i`: position, filtered covariance
/// `(Σ'11, Σ'12, Σ'22)` and color.
pub fn stored_attributes(cloud: &GaussianCloud, i: usize) -> [f64; 8] {
    let [x, y] = cloud.positions()[i];
    let s = cloud.filtered_covariance(i);
    let [r, g, b] = cloud.colors()[i];
    [x, y, s.xx, s.xy, s.yy, r, g, b]
}

/// Builds a decodable cloud (direct parameterization, zero filter variance)
/// from stored attribute rows.
pub fn cloud_from_attributes(rows: &[[f64; 8]], budget: usize) -> Result<GaussianCloud> {
    let mut positions = Vec::with_capacity(rows.len());
    let mut covs = Vec::with_capacity(rows.len());
    let mut colors = Vec::with_capacity(rows.len());
    for a in rows {
        positions.push([a[0], a[1]]);
        covs.push([a[2], a[3], a[4]]);
        colors.push([a[5], a[6], a[7]]);
    }
    let filters = alloc::vec![0.0; rows.len()];
    GaussianCloud::from_parts(Parameterization::Direct, budget.max(rows.len()).max(1), positions, covs, colors, filters)
}

/// Whether a primitive's variance channels can be log-quantized.
fn encodable(cloud: &GaussianCloud, i: usize) -> bool {
    let s = cloud.filtered_covariance(i);
    s.xx > 0.0 && s.yy > 0.0 && s.xx.is_finite() && s.yy.is_finite()
}

/// Fake-quantizes every primitive. Primitives that cannot be encoded get a
/// covariance the renderer skips.
pub fn fake_quant_cloud(cloud: &GaussianCloud, bank: &QuantizerBank) -> Result<GaussianCloud> {
    let rows = (0..cloud.len())
        .map(|i| {
            if encodable(cloud, i) {
                bank.dequantize(&bank.quantize(&stored_attributes(cloud, i))?)
            } else {
                let [x, y] = cloud.positions()[i];
                Ok([x, y, -1.0, 0.0, -1.0, 0.0, 0.0, 0.0])
            }
        })
        .collect::<Result<Vec<_>>>()?;
    cloud_from_attributes(&rows, cloud.max_budget())
}

/// Result of quantization-aware fine-tuning.
#[derive(Debug, Clone)]
pub struct QatOutcome {
    /// Trained full-precision cloud.
    pub cloud: GaussianCloud,
    /// Trained bank, rounded to `f32` precision.
    pub bank: QuantizerBank,
    /// Training history, warm-up included.
    pub report: FitReport,
    /// Fake-quant PSNR right after calibration.
    pub calibrated_psnr: f64,
    /// Fake-quant PSNR of the final cloud with the rounded bank.
    pub final_psnr: f64,
}

/// Quantization-aware fine-tuning continuing a warm [`Trainer`].
#[derive(Debug, Clone)]
pub struct QatTrainer {
    trainer: Trainer,
    bank: QuantizerBank,
    moments: Moments,
    hyper: AdamHyper,
    calibrated_psnr: f64,
}

impl QatTrainer {
    /// Drops primitives that cannot be log-quantized, then calibrates a bank
    /// with the configured bit depths on the warm cloud.
    pub fn new(mut trainer: Trainer) -> Result<Self> {
        let bank = QuantizerBank::new(trainer.cfg.bit_depths)?;
        let keep: Vec<bool> = (0..trainer.cloud.len()).map(|i| encodable(&trainer.cloud, i)).collect();
        trainer.cloud.retain_mask(&keep);
        trainer.adam.retain(&keep);
        if trainer.cloud.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut bank = bank;
        bank.calibrate(&trainer.cloud)?;
        Self::with_bank(trainer, bank)
    }

    /// Starts from an already calibrated bank.
    pub fn with_bank(trainer: Trainer, bank: QuantizerBank) -> Result<Self> {
        let fq = fake_quant_cloud(&trainer.cloud, &bank)?;
        let img = render(&fq, trainer.gt.dims(), trainer.cfg.cutoff_sigmas)?;
        let calibrated_psnr = metrics::psnr(&img.clamped(), &trainer.gt)?;
        Ok(Self {
            trainer,
            bank,
            moments: Moments::new(2, 8),
            hyper: AdamHyper::default(),
            calibrated_psnr,
        })
    }

    pub fn bank(&self) -> &QuantizerBank {
        &self.bank
    }

    pub fn cloud(&self) -> &GaussianCloud {
        &self.trainer.cloud
    }

    pub fn iteration(&self) -> u32 {
        self.trainer.iteration
    }

    pub fn calibrated_psnr(&self) -> f64 {
        self.calibrated_psnr
    }

    /// One fine-tuning iteration through the fake-quant path.
    pub fn step(&mut self, observer: &mut dyn FnMut(&LogRecord)) -> Result<f64> {
        let tr = &mut self.trainer;
        let cfg = tr.cfg.clone();
        let dims = tr.gt.dims();
        let n = tr.cloud.len();

        let fq = fake_quant_cloud(&tr.cloud, &self.bank)?;
        let rendered = render(&fq, dims, cfg.cutoff_sigmas)?;
        let (loss, d_pixels) = l2_loss(&rendered, &tr.gt)?;
        if tr.iteration % cfg.log_interval == 0 {
            let record = LogRecord {
                iteration: tr.iteration,
                loss,
                psnr: metrics::psnr(&rendered.clamped(), &tr.gt)?,
                count: n,
            };
            observer(&record);
            tr.history.push(record);
        }
        let grads = render_backward(&fq, dims, &d_pixels, cfg.cutoff_sigmas)?;

        let mut d_pos = alloc::vec![[0.0; 2]; n];
        let mut d_cov = alloc::vec![[0.0; 3]; n];
        let mut d_col = alloc::vec![[0.0; 3]; n];
        let mut d_q = [[0.0f64; 2]; 8];
        let fq_positions = fq.positions();
        let fq_colors = fq.colors();
        for i in 0..n {
            if !encodable(&tr.cloud, i) {
                continue;
            }
            let attrs = stored_attributes(&tr.cloud, i);
            let fq_cov = fq.raw_covariance(i);
            let dequant = [
                fq_positions[i][0],
                fq_positions[i][1],
                fq_cov.xx,
                fq_cov.xy,
                fq_cov.yy,
                fq_colors[i][0],
                fq_colors[i][1],
                fq_colors[i][2],
            ];
            let upstream = [
                grads.d_position[i][0],
                grads.d_position[i][1],
                grads.d_covariance[i][0],
                grads.d_covariance[i][1],
                grads.d_covariance[i][2],
                grads.d_color[i][0],
                grads.d_color[i][1],
                grads.d_color[i][2],
            ];
            let mut d_attr = [0.0; 8];
            for c in 0..8 {
                let q = &self.bank.channels[c];
                // log channels: d/dŵ of exp(ŵ) is the dequantized value
                let up = match q.domain {
                    QuantDomain::Linear => upstream[c],
                    QuantDomain::Log => upstream[c] * dequant[c],
                };
                let g = q.fake_quant_backward(attrs[c], up)?;
                d_attr[c] = g.d_value;
                d_q[c][0] += g.d_scale;
                d_q[c][1] += g.d_offset;
            }
            d_pos[i] = [d_attr[0], d_attr[1]];
            d_cov[i] = tr.cloud.covariance(i).pullback([d_attr[2], d_attr[3], d_attr[4]]);
            d_col[i] = [d_attr[5], d_attr[6], d_attr[7]];
        }
        if cfg.lsq_grad_scale && n > 0 {
            for (c, g) in d_q.iter_mut().enumerate() {
                let factor = 1.0 / math::sqrt(n as f64 * self.bank.channels[c].max_code() as f64);
                g[0] *= factor;
                g[1] *= factor;
            }
        }

        tr.iteration += 1;
        let t = tr.iteration;
        let lr_scale = cfg.lr_scale(t);
        tr.adam.begin_step();
        let hyper = tr.adam.hyper;
        tr.adam
            .position
            .update(tr.cloud.positions.as_flattened_mut(), d_pos.as_flattened(), cfg.lr_position * lr_scale, &hyper);
        tr.adam.covariance.update(
            tr.cloud.cov_params.as_flattened_mut(),
            d_cov.as_flattened(),
            cfg.lr_covariance * lr_scale,
            &hyper,
        );
        tr.adam
            .color
            .update(tr.cloud.colors.as_flattened_mut(), d_col.as_flattened(), cfg.lr_color * lr_scale, &hyper);

        // quantizer parameters have their own step count
        self.hyper.advance();
        let mut params: Vec<f64> = self.bank.channels.iter().flat_map(|q| [q.scale, q.offset]).collect();
        self.moments
            .update(&mut params, d_q.as_flattened(), cfg.quantizer_lr * lr_scale, &self.hyper);
        for (q, p) in self.bank.channels.iter_mut().zip(params.chunks_exact(2)) {
            q.set_params(p[0], p[1]);
        }

        if densifier::is_prune_iteration(t, &cfg) {
            self.prune()?;
        }
        Ok(loss)
    }

    /// Removes primitives that cannot be encoded or whose dequantized
    /// covariance is invalid; returns the number removed.
    pub fn prune(&mut self) -> Result<usize> {
        let tr = &mut self.trainer;
        let fq = fake_quant_cloud(&tr.cloud, &self.bank)?;
        let keep: Vec<bool> = (0..tr.cloud.len())
            .map(|i| {
                let s: Sym2 = fq.raw_covariance(i);
                encodable(&tr.cloud, i) && is_psd(&s) && s.det() > 0.0
            })
            .collect();
        let removed = keep.iter().filter(|k| !**k).count();
        if removed > 0 {
            tr.cloud.retain_mask(&keep);
            tr.adam.retain(&keep);
        }
        Ok(removed)
    }

    pub fn run_until(&mut self, until: u32, observer: &mut dyn FnMut(&LogRecord)) -> Result<()> {
        while self.trainer.iteration < until {
            self.step(observer)?;
        }
        Ok(())
    }

    /// Rounds the bank to storage precision, drops unencodable or invalid
    /// primitives and logs the final fake-quant state.
    pub fn finish(mut self, observer: &mut dyn FnMut(&LogRecord), encode_seconds: Option<f64>) -> Result<QatOutcome> {
        self.bank.round_to_f32();
        self.prune()?;
        let tr = &mut self.trainer;
        let fq = fake_quant_cloud(&tr.cloud, &self.bank)?;
        let rendered = render(&fq, tr.gt.dims(), tr.cfg.cutoff_sigmas)?;
        let (loss, _) = l2_loss(&rendered, &tr.gt)?;
        let final_psnr = metrics::psnr(&rendered.clamped(), &tr.gt)?;
        if tr.history.last().map(|r| r.iteration) != Some(tr.iteration) {
            let record = LogRecord {
                iteration: tr.iteration,
                loss,
                psnr: final_psnr,
                count: tr.cloud.len(),
            };
            observer(&record);
            tr.history.push(record);
        }
        let report = self.trainer.into_report(encode_seconds);
        Ok(QatOutcome {
            cloud: report.cloud.clone(),
            bank: self.bank,
            report,
            calibrated_psnr: self.calibrated_psnr,
            final_psnr,
        })
    }
}

/// Calibrates on the warm trainer's cloud and fine-tunes through
/// `cfg.total_iterations`, without growth.
pub fn qat_finetune(warm: Trainer, observer: &mut dyn FnMut(&LogRecord)) -> Result<QatOutcome> {
    let total = warm.cfg.total_iterations;
    let mut qat = QatTrainer::new(warm)?;
    qat.run_until(total, observer)?;
    qat.finish(observer, None)
}

/// Warm-up fit, calibration and fine-tuning in one call.
pub fn compress(gt: &ImagePlane, cfg: &crate::model::TrainConfig, observer: &mut dyn FnMut(&LogRecord)) -> Result<QatOutcome> {
    #[cfg(feature = "std")]
    let start = std::time::Instant::now();
    let mut warm = Trainer::new(gt, cfg)?;
    warm.run_until(cfg.warmup_iterations, observer)?;
    let mut qat = QatTrainer::new(warm)?;
    qat.run_until(cfg.total_iterations, observer)?;
    #[cfg(feature = "std")]
    let seconds = Some(start.elapsed().as_secs_f64());
    #[cfg(not(feature = "std"))]
    let seconds = None;
    qat.finish(observer, seconds)
}

/// Raw covariance helper for tests and callers building direct clouds.
pub fn direct(s11: f64, s12: f64, s22: f64) -> CovarianceParam {
    CovarianceParam::Direct { s11, s12, s22 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TrainConfig;
    use crate::seeded_rng;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn lin(bits: u8, scale: f64, offset: f64) -> LsqChannelQuantizer {
        LsqChannelQuantizer::with_params(bits, scale, offset, QuantDomain::Linear).unwrap()
    }

    #[test]
    fn quantize_examples() {
        assert_eq!(lin(6, 1.0, 0.0).quantize(2.4).unwrap(), 2);
        assert_eq!(lin(6, 1.0, 0.0).quantize(-3.0).unwrap(), 0);
        assert_eq!(lin(6, 1.0, 0.0).quantize(100.0).unwrap(), 63);
        let one_bit = lin(1, 1.0, 0.0);
        for v in [-1.0, 0.2, 0.7, 1.0, 5.0] {
            assert!(one_bit.quantize(v).unwrap() <= 1);
        }
        // ties go to even
        assert_eq!(lin(6, 1.0, 0.0).quantize(2.5).unwrap(), 2);
        assert_eq!(lin(6, 1.0, 0.0).quantize(3.5).unwrap(), 4);
    }

    #[test]
    fn dequantize_examples() {
        assert_eq!(lin(6, 1.0, 0.0).dequantize(0).unwrap(), 0.0);
        assert_eq!(lin(6, 0.5, 1.0).dequantize(3).unwrap(), 2.5);
        assert_eq!(
            lin(6, 1.0, 0.0).dequantize(64),
            Err(Error::CodeOutOfRange { code: 64, bits: 6 })
        );
    }

    #[test]
    fn log_domain_rejects_non_positive() {
        let q = LsqChannelQuantizer::new(10, QuantDomain::Log).unwrap();
        assert_eq!(q.quantize(0.0), Err(Error::LogDomain(0.0)));
        assert!(q.quantize(-1.0).is_err());
        assert!(q.quantize(f64::NAN).is_err());
    }

    #[test]
    fn backward_branches() {
        let q = lin(6, 0.5, 1.0);
        // on a lattice point
        let g = q.fake_quant_backward(2.5, 0.7).unwrap();
        assert_eq!(g, FakeQuantGrad { d_value: 0.7, d_scale: 0.0, d_offset: 0.0 });
        // far below
        let g = q.fake_quant_backward(-50.0, 0.7).unwrap();
        assert_eq!(g, FakeQuantGrad { d_value: 0.0, d_scale: 0.0, d_offset: 0.7 });
        // far above
        let g = q.fake_quant_backward(1e6, 0.7).unwrap();
        assert_eq!(g, FakeQuantGrad { d_value: 0.0, d_scale: 0.7 * 63.0, d_offset: 0.7 });
    }

    #[test]
    fn calibrate_examples() {
        let mut q = LsqChannelQuantizer::new(6, QuantDomain::Linear).unwrap();
        q.calibrate(&[0.0, 63.0]).unwrap();
        assert_eq!((q.offset(), q.scale()), (0.0, 1.0));

        let mut q = LsqChannelQuantizer::new(1, QuantDomain::Linear).unwrap();
        q.calibrate(&[-1.0, 1.0]).unwrap();
        assert_eq!((q.offset(), q.scale()), (-1.0, 2.0));
        assert_eq!(q.quantize(-1.0).unwrap(), 0);
        assert_eq!(q.quantize(1.0).unwrap(), 1);
        assert_eq!(q.dequantize(0).unwrap(), -1.0);
        assert_eq!(q.dequantize(1).unwrap(), 1.0);

        let mut q = LsqChannelQuantizer::new(8, QuantDomain::Linear).unwrap();
        q.calibrate(&[0.3; 5]).unwrap();
        assert_eq!(q.scale(), 1e-8);
        assert_eq!(q.quantize(0.3).unwrap(), 0);
        assert_eq!(q.dequantize(0).unwrap(), 0.3);

        assert_eq!(q.calibrate(&[]), Err(Error::EmptyCalibration));
    }

    #[test]
    fn default_bank_layout() {
        let bank = QuantizerBank::default();
        assert_eq!(bank.bits_per_primitive(), 72);
        assert_eq!(bank.bit_depths(), [12, 10, 6]);
        let domains: Vec<_> = bank.channels().iter().map(|c| c.domain()).collect();
        assert_eq!(domains[2], QuantDomain::Log);
        assert_eq!(domains[4], QuantDomain::Log);
        assert_eq!(domains.iter().filter(|d| **d == QuantDomain::Log).count(), 2);
        assert!(QuantizerBank::new([12, 0, 6]).is_err());
    }

    proptest! {
        #[test]
        fn lattice_round_trip(
            bits in prop::sample::select(vec![1u8, 6, 10, 12]),
            scale in 1e-3f64..10.0,
            offset in -5.0f64..5.0,
            log in any::<bool>(),
            frac in 0.0f64..1.0,
        ) {
            let domain = if log { QuantDomain::Log } else { QuantDomain::Linear };
            let scale = if log { scale / 1000.0 } else { scale };
            let q = LsqChannelQuantizer::with_params(bits, scale, offset, domain).unwrap();
            let code = (frac * q.max_code() as f64).round() as u32;
            let v = q.dequantize(code).unwrap();
            prop_assert_eq!(q.quantize(v).unwrap(), code);
            let lo = q.dequantize(0).unwrap();
            let hi = q.dequantize(q.max_code()).unwrap();
            prop_assert!(v >= lo && v <= hi);
        }

        #[test]
        fn step_gradient_matches_frozen_branch(v in -2.0f64..40.0, scale in 0.2f64..3.0, offset in -1.0f64..1.0) {
            let q = lin(4, scale, offset);
            let u = (v - offset) / scale;
            prop_assume!(u >= 0.0 && u <= 15.0);
            let frozen = math::round_ties_even(u) - u;
            // rounding offset held fixed: v̂(s) = (u(s) + δ)·s + β
            let f = |s: f64| ((v - offset) / s + frozen) * s + offset;
            // affine in s, so a wide step costs no truncation error
            let h = 1e-3;
            let fd = (f(scale + h) - f(scale - h)) / (2.0 * h);
            let g = q.fake_quant_backward(v, 1.0).unwrap();
            let denom = g.d_scale.abs().max(1e-3);
            prop_assert!((fd - g.d_scale).abs() / denom < 1e-6, "fd {} analytic {}", fd, g.d_scale);
        }
    }

    fn small_image(seed: u64) -> ImagePlane {
        let (h, w) = (24, 24);
        let mut rng = seeded_rng(seed);
        let mut data = Vec::with_capacity(h * w * 3);
        for r in 0..h {
            for c in 0..w {
                let base = ((r as f64 / 6.0).sin() * (c as f64 / 5.0).cos() + 1.0) / 2.0;
                for ch in 0..3 {
                    data.push((base * (0.6 + 0.2 * ch as f64) + 0.05 * rng.random::<f64>()).clamp(0.0, 1.0));
                }
            }
        }
        ImagePlane::from_data(h, w, data).unwrap()
    }

    #[test]
    fn zero_qat_iterations_equal_calibration() {
        let gt = small_image(0);
        let mut cfg = TrainConfig::for_iterations(200);
        cfg.max_gaussians = 120;
        cfg.lr_color = 0.02;
        cfg.warmup_iterations = 200;
        let outcome = compress(&gt, &cfg, &mut |_| {}).unwrap();
        // the final value uses the f32-rounded bank, so allow rounding noise
        assert!((outcome.final_psnr - outcome.calibrated_psnr).abs() < 1e-3);
    }

    #[test]
    fn qat_keeps_state_consistent() {
        let gt = small_image(1);
        let mut cfg = TrainConfig::for_iterations(300);
        cfg.max_gaussians = 120;
        cfg.lr_color = 0.02;
        cfg.prune_interval = 10;
        let outcome = compress(&gt, &cfg, &mut |_| {}).unwrap();
        assert!(outcome.final_psnr.is_finite());
        assert!(outcome.cloud.len() <= 120);
        for i in 0..outcome.cloud.len() {
            assert!(encodable(&outcome.cloud, i));
        }
        for q in outcome.bank.channels() {
            assert_eq!(q.scale(), q.scale() as f32 as f64);
            assert!(q.scale() >= 1e-8);
        }
        let fq = fake_quant_cloud(&outcome.cloud, &outcome.bank).unwrap();
        assert_eq!(densifier::valid_mask(&fq).iter().filter(|v| !**v).count(), 0);
    }

    #[test]
    fn fake_quant_cloud_marks_unencodable() {
        let mut cloud = GaussianCloud::new(Parameterization::Direct, 4).unwrap();
        cloud.push([1.0, 1.0], direct(1.0, 0.0, 1.0), [0.5; 3], 0.0).unwrap();
        cloud.push([2.0, 2.0], direct(-1.0, 0.0, 1.0), [0.5; 3], 0.5).unwrap();
        let mut bank = QuantizerBank::default();
        bank.calibrate(&cloud.select(&[0])).unwrap();
        let fq = fake_quant_cloud(&cloud, &bank).unwrap();
        assert!(!is_psd(&fq.raw_covariance(1)));
        assert_eq!(fq.filter_variances(), &[0.0, 0.0]);
    }
}
