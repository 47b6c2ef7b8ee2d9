//! 8-bit RGB image files (PNG, PPM) to and from [`ImagePlane`].

use std::path::Path;

use anyhow::{bail, Context, Result};
use gsimage_core::ImagePlane;
use image::{ColorType, DynamicImage, RgbImage};

/// Reads an 8-bit RGB PNG or PPM into `[0, 1]` floats. Images with an alpha
/// channel, grayscale or 16-bit samples are rejected.
pub fn load_image(path: &Path) -> Result<ImagePlane> {
    let img = image::open(path).with_context(|| format!("reading {}", path.display()))?;
    from_dynamic(img).with_context(|| format!("decoding {}", path.display()))
}

fn from_dynamic(img: DynamicImage) -> Result<ImagePlane> {
    let rgb = match img {
        DynamicImage::ImageRgb8(rgb) => rgb,
        other => match other.color() {
            c if c.has_alpha() => bail!("images with an alpha channel are not supported"),
            ColorType::L8 | ColorType::L16 => bail!("grayscale images are not supported; convert to RGB"),
            c => bail!("unsupported pixel format {c:?}; expected 8-bit RGB"),
        },
    };
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect();
    Ok(ImagePlane::from_data(h as usize, w as usize, data)?)
}

/// Clamps to `[0, 1]` and rounds to 8 bits.
pub fn to_rgb8(plane: &ImagePlane) -> RgbImage {
    let bytes = plane
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    RgbImage::from_raw(plane.width() as u32, plane.height() as u32, bytes).expect("buffer matches dimensions")
}

/// Writes a clamped 8-bit image; the format follows the extension.
pub fn save_image(path: &Path, plane: &ImagePlane) -> Result<()> {
    to_rgb8(plane)
        .save(path)
        .with_context(|| format!("writing {}", path.display()))
}

/// The 8-bit quantized version of `plane`, back in `[0, 1]`.
pub fn round_trip_8bit(plane: &ImagePlane) -> ImagePlane {
    let rgb = to_rgb8(plane);
    from_dynamic(DynamicImage::ImageRgb8(rgb)).expect("rgb8 input")
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgba, RgbaImage};

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut plane = ImagePlane::zeros(3, 5).unwrap();
        plane.set_pixel(1, 2, [1.0, 0.5, -3.0]);
        plane.set_pixel(2, 4, [2.0, 0.2, 0.0]);
        save_image(&path, &plane).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.dims(), (3, 5));
        assert_eq!(back.pixel(1, 2), [1.0, 128.0 / 255.0, 0.0]);
        assert_eq!(back.pixel(2, 4), [1.0, 51.0 / 255.0, 0.0]);
        assert_eq!(back.data(), round_trip_8bit(&plane).data());
    }

    #[test]
    fn ppm_is_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ppm");
        let plane = ImagePlane::from_data(2, 2, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0, 0.8, 0.6, 0.4, 0.2, 0.0]).unwrap();
        save_image(&path, &plane).unwrap();
        assert_eq!(load_image(&path).unwrap().data(), round_trip_8bit(&plane).data());
    }

    #[test]
    fn alpha_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        RgbaImage::from_pixel(4, 4, Rgba([1, 2, 3, 4])).save(&path).unwrap();
        let err = load_image(&path).unwrap_err();
        assert!(format!("{err:#}").contains("alpha"));
    }
}
