//! Image representation and compression with a bounded set of 2D Gaussian
//! primitives.
//!
//! An image is approximated by the accumulated sum of anisotropic Gaussian
//! footprints, each carrying a position, a 2×2 covariance and an RGB color.
//! The pieces are:
//!
//! * [`model`]: the Gaussian cloud, image buffers and covariance parameterizations.
//! * [`rasterizer`]: forward rendering, analytic backward pass and a brute-force reference.
//! * [`densifier`]: sparse initialization, error-driven growing and PSD pruning.
//! * [`caf`]: content-aware low-pass filter variances.
//! * [`trainer`]: Adam fitting loop with the densification schedule.
//! * [`quantizer`]: learnable scalar quantizers and quantization-aware fine-tuning.
//! * [`bitstream`]: the `.g2gs` container.
//! * [`metrics`]: PSNR and MS-SSIM.
//!
//! The crate is `no_std` (with `alloc`) when the default `std` feature is
//! disabled. The `parallel` feature renders with rayon; results do not depend
//! on the worker count.
#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod math;

pub mod bitstream;
pub mod caf;
pub mod densifier;
pub mod error;
pub mod metrics;
pub mod model;
pub mod quantizer;
pub mod rasterizer;
pub mod trainer;

pub use error::{Error, Result};
pub use model::{
    is_psd, CovarianceParam, GaussianCloud, ImagePlane, Parameterization, Sym2, TrainConfig,
};
pub use rasterizer::{render, render_backward, render_naive, RenderGradients, DEFAULT_CUTOFF_SIGMAS};
pub use trainer::{fit, FitReport, Trainer};

/// Seeded generator used everywhere randomness is needed.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Builds the crate's deterministic RNG from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    Rng::seed_from_u64(seed)
}
