use gsimage_core::metrics::{ms_ssim, ms_ssim_scales, psnr, MS_SSIM_WEIGHTS};
use gsimage_core::{seeded_rng, ImagePlane};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

/// Direct 2-D evaluation: full 11×11 window per output pixel, one channel
/// at a time, images as nested vectors.
fn reference_ms_ssim(a: &ImagePlane, b: &ImagePlane) -> f64 {
    let mut kernel = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in kernel.iter_mut().enumerate() {
        for (j, k) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *k = (-(di * di + dj * dj) / 4.5).exp();
            total += *k;
        }
    }
    kernel.iter_mut().flatten().for_each(|k| *k /= total);

    let scales = ms_ssim_scales(a.height(), a.width());
    let weights: Vec<f64> = {
        let w = &MS_SSIM_WEIGHTS[..scales];
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    };
    let channel = |img: &ImagePlane, c: usize| -> Vec<Vec<f64>> {
        (0..img.height())
            .map(|r| (0..img.width()).map(|col| img.pixel(r, col)[c]).collect())
            .collect()
    };
    let half = |x: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        (0..x.len() / 2)
            .map(|r| {
                (0..x[0].len() / 2)
                    .map(|c| (x[2 * r][2 * c] + x[2 * r + 1][2 * c] + x[2 * r][2 * c + 1] + x[2 * r + 1][2 * c + 1]) / 4.0)
                    .collect()
            })
            .collect()
    };
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    for c in 0..3 {
        let mut x = channel(a, c);
        let mut y = channel(b, c);
        let mut value = 1.0;
        for (s, w) in weights.iter().enumerate() {
            let (h, wd) = (x.len() - 10, x[0].len() - 10);
            let (mut ssim, mut cs) = (0.0, 0.0);
            for r in 0..h {
                for col in 0..wd {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let k = kernel[i][j];
                            let (p, q) = (x[r + i][col + j], y[r + i][col + j]);
                            mx += k * p;
                            my += k * q;
                            sxx += k * p * p;
                            syy += k * q * q;
                            sxy += k * p * q;
                        }
                    }
                    let v = (2.0 * (sxy - mx * my) + c2) / (sxx - mx * mx + syy - my * my + c2);
                    cs += v;
                    ssim += v * (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                }
            }
            let n = (h * wd) as f64;
            let term = if s + 1 == scales { ssim / n } else { cs / n };
            value *= term.max(0.0).powf(*w);
            x = half(&x);
            y = half(&y);
        }
        sum += value;
    }
    sum / 3.0
}

fn smooth_image(h: usize, w: usize, seed: u64) -> ImagePlane {
    let mut rng = seeded_rng(seed);
    let f: [f64; 3] = [rng.random_range(0.05..0.3), rng.random_range(0.05..0.3), rng.random_range(0.05..0.3)];
    let mut img = ImagePlane::zeros(h, w).unwrap();
    for r in 0..h {
        for c in 0..w {
            let v = |k: usize| 0.5 + 0.4 * ((r as f64 * f[k]).sin() * (c as f64 * f[(k + 1) % 3]).cos());
            img.set_pixel(r, c, [v(0), v(1), v(2)]);
        }
    }
    img
}

fn add_noise(img: &ImagePlane, sigma: f64, seed: u64) -> ImagePlane {
    let mut rng = seeded_rng(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let data = img
        .data()
        .iter()
        .map(|v| (v + noise.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    ImagePlane::from_data(img.height(), img.width(), data).unwrap()
}

#[test]
fn ms_ssim_matches_direct_evaluation() {
    for (k, (h, w)) in [(48, 52), (100, 90), (176, 180)].into_iter().enumerate() {
        let a = smooth_image(h, w, k as u64);
        for b in [add_noise(&a, 0.1, 1), smooth_image(h, w, 10 + k as u64)] {
            let fast = ms_ssim(&a, &b).unwrap();
            let slow = reference_ms_ssim(&a, &b);
            assert!((fast - slow).abs() < 1e-9, "{h}x{w}: {fast} vs {slow}");
        }
    }
}

#[test]
fn inverted_image_scores_low() {
    let a = smooth_image(64, 64, 3);
    let inv = ImagePlane::from_data(64, 64, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    assert!(ms_ssim(&a, &inv).unwrap() < 0.5);
}

#[test]
fn quality_falls_with_noise() {
    let a = smooth_image(64, 80, 4);
    let mut last_psnr = f64::INFINITY;
    let mut last_ssim = 1.0 + 1e-12;
    for sigma in [0.01, 0.05, 0.1, 0.3] {
        let b = add_noise(&a, sigma, 7);
        let p = psnr(&a, &b).unwrap();
        let s = ms_ssim(&a, &b).unwrap();
        assert!(p < last_psnr && s < last_ssim, "sigma {sigma}");
        last_psnr = p;
        last_ssim = s;
    }
}
