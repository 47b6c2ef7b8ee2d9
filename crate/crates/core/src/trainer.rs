//! Fitting loop: Adam on positions, covariance parameters and colors under
//! an L2 loss, with the densification and filter schedule.

use alloc::vec::Vec;

use crate::caf::CafPolicy;
use crate::densifier::{self, grow, is_growth_iteration, is_prune_iteration};
use crate::error::Result;
use crate::metrics;
use crate::model::{GaussianCloud, ImagePlane, TrainConfig};
use crate::rasterizer::{render, render_backward};
use crate::{seeded_rng, Rng};

mod adam;

pub use adam::{AdamHyper, AdamState, Moments};

/// Mean squared error over all `H·W·3` entries and its gradient.
pub fn l2_loss(rendered: &ImagePlane, gt: &ImagePlane) -> Result<(f64, ImagePlane)> {
    gt.ensure_same_dims(rendered)?;
    let n = rendered.data().len() as f64;
    let mut sum = 0.0;
    let grad: Vec<f64> = rendered
        .data()
        .iter()
        .zip(gt.data())
        .map(|(r, g)| {
            let d = r - g;
            sum += d * d;
            2.0 * d / n
        })
        .collect();
    let grad = ImagePlane::from_data(rendered.height(), rendered.width(), grad)?;
    Ok((sum / n, grad))
}

/// PSNR of the clamped render of `cloud` against `gt`.
pub fn psnr_of_cloud(cloud: &GaussianCloud, gt: &ImagePlane, cutoff_sigmas: f64) -> Result<f64> {
    let img = render(cloud, gt.dims(), cutoff_sigmas)?;
    metrics::psnr(&img.clamped(), gt)
}

/// One progress record; `iteration` counts completed optimizer steps.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogRecord {
    pub iteration: u32,
    pub loss: f64,
    pub psnr: f64,
    pub count: usize,
}

/// Outcome of a fitting run.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub history: Vec<LogRecord>,
    /// Wall-clock seconds, when a clock is available.
    pub encode_seconds: Option<f64>,
    pub cloud: GaussianCloud,
}

impl FitReport {
    pub fn final_psnr(&self) -> f64 {
        self.history.last().map_or(f64::NAN, |r| r.psnr)
    }

    /// Equality of everything except wall-clock time.
    pub fn same_outcome(&self, other: &FitReport) -> bool {
        self.cloud == other.cloud
            && self.history.len() == other.history.len()
            && self.history.iter().zip(&other.history).all(|(a, b)| {
                a.iteration == b.iteration
                    && a.count == b.count
                    && a.loss.to_bits() == b.loss.to_bits()
                    && a.psnr.to_bits() == b.psnr.to_bits()
            })
    }
}

/// Stateful fitting loop, advanced one iteration at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub(crate) gt: ImagePlane,
    pub(crate) cfg: TrainConfig,
    pub(crate) cloud: GaussianCloud,
    pub(crate) adam: AdamState,
    pub(crate) rng: Rng,
    pub(crate) policy: CafPolicy,
    pub(crate) iteration: u32,
    pub(crate) history: Vec<LogRecord>,
}

impl Trainer {
    /// Validates `cfg` and initializes the cloud: `⌊M/2⌋` primitives with
    /// densification on, all `M` at once otherwise.
    pub fn new(gt: &ImagePlane, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(cfg.seed);
        let policy = CafPolicy::new(cfg.enable_caf, cfg.caf_alpha, cfg.constant_filter_variance);
        let cloud = if cfg.enable_densification {
            densifier::sparse_init(cfg.max_gaussians, gt.dims(), cfg.parameterization, policy, &mut rng)?
        } else {
            densifier::random_init(
                cfg.max_gaussians,
                cfg.max_gaussians,
                gt.dims(),
                cfg.parameterization,
                policy,
                &mut rng,
            )?
        };
        let adam = AdamState::new(cloud.len());
        Ok(Self {
            gt: gt.clone(),
            cfg: cfg.clone(),
            cloud,
            adam,
            rng,
            policy,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn cloud(&self) -> &GaussianCloud {
        &self.cloud
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn iteration(&self) -> u32 {
        self.iteration
    }

    pub fn adam(&self) -> &AdamState {
        &self.adam
    }

    pub fn history(&self) -> &[LogRecord] {
        &self.history
    }

    pub fn ground_truth(&self) -> &ImagePlane {
        &self.gt
    }

    fn log(&mut self, loss: f64, rendered: &ImagePlane, observer: &mut dyn FnMut(&LogRecord)) -> Result<()> {
        let record = LogRecord {
            iteration: self.iteration,
            loss,
            psnr: metrics::psnr(&rendered.clamped(), &self.gt)?,
            count: self.cloud.len(),
        };
        observer(&record);
        self.history.push(record);
        Ok(())
    }

    /// Runs one iteration: render, loss, backward, Adam, then the prune and
    /// growth events scheduled for the new iteration count.
    pub fn step(&mut self, observer: &mut dyn FnMut(&LogRecord)) -> Result<f64> {
        let dims = self.gt.dims();
        let cutoff = self.cfg.cutoff_sigmas;
        let rendered = render(&self.cloud, dims, cutoff)?;
        let (loss, d_pixels) = l2_loss(&rendered, &self.gt)?;
        if self.iteration % self.cfg.log_interval == 0 {
            self.log(loss, &rendered, observer)?;
        }
        let grads = render_backward(&self.cloud, dims, &d_pixels, cutoff)?;
        let d_cov = grads.covariance_param_gradients(&self.cloud);

        self.iteration += 1;
        let t = self.iteration;
        let scale = self.cfg.lr_scale(t);
        self.adam.begin_step();
        self.adam.position.update(
            self.cloud.positions.as_flattened_mut(),
            grads.d_position.as_flattened(),
            self.cfg.lr_position * scale,
            &self.adam.hyper,
        );
        self.adam.covariance.update(
            self.cloud.cov_params.as_flattened_mut(),
            d_cov.as_flattened(),
            self.cfg.lr_covariance * scale,
            &self.adam.hyper,
        );
        self.adam.color.update(
            self.cloud.colors.as_flattened_mut(),
            grads.d_color.as_flattened(),
            self.cfg.lr_color * scale,
            &self.adam.hyper,
        );

        if is_prune_iteration(t, &self.cfg) {
            let keep = densifier::prune_with_mask(&mut self.cloud);
            self.adam.retain(&keep);
        }
        if is_growth_iteration(t, &self.cfg) {
            let current = render(&self.cloud, dims, cutoff)?;
            let added = grow(&mut self.cloud, &self.gt, &current, self.policy, &mut self.rng)?;
            self.adam.extend(added);
        }
        debug_assert_eq!(self.adam.len(), self.cloud.len());
        Ok(loss)
    }

    /// Steps until the iteration counter reaches `until`.
    pub fn run_until(&mut self, until: u32, observer: &mut dyn FnMut(&LogRecord)) -> Result<()> {
        while self.iteration < until {
            self.step(observer)?;
        }
        Ok(())
    }

    /// Logs the final state unless it was just logged.
    pub fn log_final(&mut self, observer: &mut dyn FnMut(&LogRecord)) -> Result<()> {
        if self.history.last().map(|r| r.iteration) == Some(self.iteration) {
            return Ok(());
        }
        let rendered = render(&self.cloud, self.gt.dims(), self.cfg.cutoff_sigmas)?;
        let (loss, _) = l2_loss(&rendered, &self.gt)?;
        self.log(loss, &rendered, observer)
    }

    pub fn into_report(self, encode_seconds: Option<f64>) -> FitReport {
        FitReport {
            history: self.history,
            encode_seconds,
            cloud: self.cloud,
        }
    }
}

/// Fits a cloud to `gt` for `cfg.total_iterations` iterations.
pub fn fit(gt: &ImagePlane, cfg: &TrainConfig) -> Result<FitReport> {
    fit_with(gt, cfg, &mut |_| {})
}

/// [`fit`] with a callback invoked on every log record.
pub fn fit_with(gt: &ImagePlane, cfg: &TrainConfig, observer: &mut dyn FnMut(&LogRecord)) -> Result<FitReport> {
    #[cfg(feature = "std")]
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(gt, cfg)?;
    trainer.run_until(cfg.total_iterations, observer)?;
    trainer.log_final(observer)?;
    #[cfg(feature = "std")]
    let seconds = Some(start.elapsed().as_secs_f64());
    #[cfg(not(feature = "std"))]
    let seconds = None;
    Ok(trainer.into_report(seconds))
}
