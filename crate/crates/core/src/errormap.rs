//! Scale-invariant depth error maps rendered as color images.
//!
//! Each pixel valid in both maps gets `|log p - log r - mean(log p - log r)|`,
//! clamped to [`ERROR_CEILING`] and colored by linear interpolation through
//! [`COLORMAP`] (blue for zero error, dark red at the ceiling). Pixels invalid
//! in either map are black.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::io::write_atomic;

/// Log-depth error mapped to the last color stop.
pub const ERROR_CEILING: f64 = 0.5;

/// Evenly spaced stops from zero error to [`ERROR_CEILING`].
pub const COLORMAP: [[u8; 3]; 9] = [
    [0, 0, 143],
    [0, 0, 255],
    [0, 127, 255],
    [0, 255, 255],
    [127, 255, 127],
    [255, 255, 0],
    [255, 127, 0],
    [255, 0, 0],
    [127, 0, 0],
];

pub const INVALID_COLOR: [u8; 3] = [0, 0, 0];

/// Color for an error value in log units.
pub fn colorize(err: f64) -> [u8; 3] {
    let x = if err.is_nan() { 0.0 } else { (err / ERROR_CEILING).clamp(0.0, 1.0) };
    let pos = x * (COLORMAP.len() - 1) as f64;
    let i = (pos.floor() as usize).min(COLORMAP.len() - 2);
    let f = pos - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    std::array::from_fn(|c| (a[c] as f64 + f * (b[c] as f64 - a[c] as f64)).round() as u8)
}

/// Per-pixel mean-removed absolute log difference; `None` where either map
/// is invalid.
pub fn log_deviation(pred: &DepthMap, reference: &DepthMap) -> Result<Vec<Option<f64>>> {
    pred.check_size(reference)?;
    let diffs: Vec<Option<f64>> = (0..pred.len())
        .map(|i| {
            let (p, r) = (pred.values()[i], reference.values()[i]);
            (pred.valid_mask()[i] && reference.valid_mask()[i]).then(|| (p as f64).ln() - (r as f64).ln())
        })
        .collect();
    let valid: Vec<f64> = diffs.iter().flatten().copied().collect();
    let mean = if valid.is_empty() { 0.0 } else { valid.iter().sum::<f64>() / valid.len() as f64 };
    Ok(diffs.into_iter().map(|d| d.map(|d| (d - mean).abs())).collect())
}

pub fn error_map(pred: &DepthMap, reference: &DepthMap) -> Result<RgbImage> {
    let dev = log_deviation(pred, reference)?;
    let w = pred.width();
    Ok(RgbImage::from_fn(w as u32, pred.height() as u32, |x, y| {
        let i = y as usize * w + x as usize;
        Rgb(dev[i].map_or(INVALID_COLOR, colorize))
    }))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::InvalidParams(format!("png encoding failed: {e}")))?;
    Ok(buf.into_inner())
}

pub fn write_error_map(pred: &DepthMap, reference: &DepthMap, path: &Path) -> Result<()> {
    write_atomic(path, &encode_png(&error_map(pred, reference)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> DepthMap {
        DepthMap::from_fn(w, h, |c, r| Some(10.0 + c as f32 + 0.5 * r as f32))
    }

    fn pixels(img: &RgbImage) -> Vec<[u8; 3]> {
        img.pixels().map(|p| p.0).collect()
    }

    #[test]
    fn colormap_ends() {
        assert_eq!(colorize(0.0), COLORMAP[0]);
        assert_eq!(colorize(ERROR_CEILING), COLORMAP[8]);
        assert_eq!(colorize(10.0), COLORMAP[8]);
        assert_eq!(colorize(ERROR_CEILING / 8.0 * 3.0), COLORMAP[3]);
        assert_eq!(colorize(ERROR_CEILING / 16.0), [0, 0, 199]);
    }

    #[test]
    fn identical_and_scaled_maps_are_coolest() {
        let d = ramp(20, 10);
        for pred in [d.clone(), d.scaled(3.5)] {
            let img = error_map(&pred, &d).unwrap();
            assert!(pixels(&img).iter().all(|p| *p == COLORMAP[0]));
        }
    }

    #[test]
    fn invalid_pixels_are_black() {
        let d = ramp(8, 8);
        let mut p = d.clone();
        p.set(3, 4, None);
        let img = error_map(&p, &d).unwrap();
        assert_eq!(img.get_pixel(3, 4).0, INVALID_COLOR);
        assert_eq!(img.get_pixel(0, 0).0, COLORMAP[0]);
    }

    #[test]
    fn offset_region_is_warm() {
        // A quarter of the image carries a log offset of 0.4: the mean is 0.1,
        // so the offset pixels deviate by 0.3 and the rest by 0.1.
        let d = ramp(16, 16);
        let p = d.map_valid(|i, v| if i % 16 < 4 { v * 0.4f32.exp() } else { v });
        let dev = log_deviation(&p, &d).unwrap();
        for (i, e) in dev.iter().enumerate() {
            let want = if i % 16 < 4 { 0.3 } else { 0.1 };
            assert!((e.unwrap() - want).abs() < 1e-6);
        }
        let img = error_map(&p, &d).unwrap();
        assert_eq!(img.get_pixel(0, 5).0, colorize(0.3));
        assert_eq!(img.get_pixel(10, 5).0, colorize(0.1));
    }

    #[test]
    fn half_offset_is_symmetric_after_mean_removal() {
        let d = ramp(16, 16);
        let p = d.map_valid(|i, v| if i % 16 < 8 { v * 0.4f32.exp() } else { v });
        let dev = log_deviation(&p, &d).unwrap();
        assert!(dev.iter().all(|e| (e.unwrap() - 0.2).abs() < 1e-6));
    }

    #[test]
    fn size_mismatch() {
        assert!(matches!(
            error_map(&ramp(4, 4), &ramp(5, 4)),
            Err(Error::SizeMismatch(_))
        ));
    }

    #[test]
    fn png_bytes_are_reproducible() {
        let d = ramp(12, 9);
        let p = d.map_valid(|i, v| v * (1.0 + 0.01 * (i % 7) as f32));
        let a = encode_png(&error_map(&p, &d).unwrap()).unwrap();
        let b = encode_png(&error_map(&p, &d).unwrap()).unwrap();
        assert_eq!(a, b);
        let back = image::load_from_memory(&a).unwrap().to_rgb8();
        assert_eq!(back, error_map(&p, &d).unwrap());
    }
}
