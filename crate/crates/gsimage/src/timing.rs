//! Decode throughput measurement.

use std::time::Instant;

use anyhow::{ensure, Result};
use gsimage_core::bitstream::decode;
use gsimage_core::{render, ImagePlane};

#[derive(Debug, Clone)]
pub struct DecodeTiming {
    /// Frames per second at the median wall time.
    pub fps: f64,
    /// Wall time of each decode + render, in seconds.
    pub samples: Vec<f64>,
    /// The first rendered frame.
    pub image: ImagePlane,
}

impl DecodeTiming {
    pub fn median_seconds(&self) -> f64 {
        median(&self.samples)
    }

    /// Coefficient of variation of the samples.
    pub fn variation(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        let var = self.samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        var.sqrt() / mean
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

/// Decodes and renders `bytes` `repeats` times.
pub fn time_decode(bytes: &[u8], repeats: usize, cutoff_sigmas: f64) -> Result<DecodeTiming> {
    ensure!(repeats >= 1, "repeats must be at least 1");
    let mut samples = Vec::with_capacity(repeats);
    let mut first = None;
    for _ in 0..repeats {
        let start = Instant::now();
        let decoded = decode(bytes)?;
        let image = render(&decoded.cloud, (decoded.height, decoded.width), cutoff_sigmas)?;
        samples.push(start.elapsed().as_secs_f64());
        first.get_or_insert(image);
    }
    let fps = 1.0 / median(&samples).max(1e-9);
    Ok(DecodeTiming {
        fps,
        samples,
        image: first.expect("at least one repeat"),
    })
}
