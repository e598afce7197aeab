//! Depth maps, PFM storage, and forward warping between views.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Point2, Point3};

use crate::camera::{back_project, project, CameraIntrinsics};
use crate::error::{Error, Result};
use crate::se3::Pose;

/// Row-major grid of z-depths in millimeters. Invalid pixels hold 0.0.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
}

impl DepthMap {
    /// All-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// Builds a map from raw values; a pixel is valid when its value is
    /// finite and positive.
    pub fn from_values(width: usize, height: usize, values: Vec<f32>) -> Self {
        assert_eq!(values.len(), width * height, "depth buffer size");
        let valid: Vec<bool> = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        let values = values
            .into_iter()
            .zip(&valid)
            .map(|(v, ok)| if *ok { v } else { 0.0 })
            .collect();
        Self {
            width,
            height,
            values,
            valid,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f32>) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(col, row).unwrap_or(0.0));
            }
        }
        Self::from_values(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, col: usize, row: usize) -> Option<f32> {
        let i = row * self.width + col;
        self.valid[i].then_some(self.values[i])
    }

    pub fn set(&mut self, col: usize, row: usize, value: Option<f32>) {
        let i = row * self.width + col;
        match value {
            Some(v) if v.is_finite() && v > 0.0 => {
                self.values[i] = v;
                self.valid[i] = true;
            }
            _ => {
                self.values[i] = 0.0;
                self.valid[i] = false;
            }
        }
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn valid_fraction(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.valid_count() as f64 / self.values.len() as f64
    }

    /// Applies `f` to every valid pixel; results that are not positive invalidate the pixel.
    pub fn map_valid(&self, mut f: impl FnMut(usize, f32) -> f32) -> DepthMap {
        let values = self
            .values
            .iter()
            .zip(&self.valid)
            .enumerate()
            .map(|(i, (v, ok))| if *ok { f(i, *v) } else { 0.0 })
            .collect();
        Self::from_values(self.width, self.height, values)
    }

    /// Multiplies every valid depth by `c`.
    pub fn scaled(&self, c: f32) -> DepthMap {
        self.map_valid(|_, v| v * c)
    }

    pub fn same_size(&self, other: &DepthMap) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_size(&self, other: &DepthMap) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::SizeMismatch(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    /// Writes a little-endian PFM (scale -1.0), bottom row first.
    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(32 + 4 * self.values.len());
        write!(out, "Pf\n{} {}\n-1.0\n", self.width, self.height).expect("vec write");
        for row in (0..self.height).rev() {
            for v in &self.values[row * self.width..(row + 1) * self.width] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        crate::io::write_atomic(path, &out)
    }

    pub fn read_pfm(path: &Path) -> Result<DepthMap> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = Vec::new();
        for _ in 0..3 {
            let mut line = String::new();
            reader
                .read_line(&mut line)
                .map_err(|e| Error::io(path, e))?;
            header.push(line.trim().to_string());
        }
        if header[0] != "Pf" {
            return Err(Error::parse(path, format!("expected 'Pf' magic, found {:?}", header[0])));
        }
        let dims: Vec<usize> = header[1]
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, format!("bad dimensions: {e}")))?;
        if dims.len() != 2 {
            return Err(Error::parse(path, "bad dimensions line"));
        }
        let (width, height) = (dims[0], dims[1]);
        let scale: f32 = header[2]
            .parse()
            .map_err(|e| Error::parse(path, format!("bad scale: {e}")))?;
        let little = scale < 0.0;
        let mut bytes = Vec::new();
        reader
            .read_to_end(&mut bytes)
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() != 4 * width * height {
            return Err(Error::parse(
                path,
                format!("expected {} data bytes, found {}", 4 * width * height, bytes.len()),
            ));
        }
        let mut values = vec![0.0f32; width * height];
        for (k, chunk) in bytes.chunks_exact(4).enumerate() {
            let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
            let (row_from_bottom, col) = (k / width, k % width);
            values[(height - 1 - row_from_bottom) * width + col] = v;
        }
        Ok(DepthMap::from_values(width, height, values))
    }
}

/// Result of forward-warping a depth map into another view.
#[derive(Debug, Clone)]
pub struct WarpedDepth {
    pub depth: DepthMap,
    /// Fraction of valid source pixels that land in the target frame in front of the camera.
    pub overlap_fraction: f64,
}

/// Forward-warps `depth` through `relative`, which maps source-camera points
/// into the target camera frame. Nearest-pixel splatting with a z-buffer.
pub fn warp_depth(depth: &DepthMap, relative: &Pose, k: &CameraIntrinsics) -> Result<WarpedDepth> {
    let total = depth.valid_count();
    if total == 0 {
        return Err(Error::EmptyDepth);
    }
    let (w, h) = (depth.width(), depth.height());
    let mut zbuf = vec![f32::INFINITY; w * h];
    let mut landed = 0usize;
    for row in 0..h {
        for col in 0..w {
            let Some(d) = depth.get(col, row) else {
                continue;
            };
            let p = back_project(&Point2::new(col as f64, row as f64), d as f64, k)?;
            let q: Point3<f64> = relative.transform_point(&p);
            let Ok(pix) = project(&q, k) else {
                continue;
            };
            let (u, v) = (pix.x.round(), pix.y.round());
            if u < 0.0 || v < 0.0 || u >= w as f64 || v >= h as f64 {
                continue;
            }
            landed += 1;
            let i = v as usize * w + u as usize;
            let z = q.z as f32;
            if z < zbuf[i] {
                zbuf[i] = z;
            }
        }
    }
    let values = zbuf
        .into_iter()
        .map(|z| if z.is_finite() { z } else { 0.0 })
        .collect();
    Ok(WarpedDepth {
        depth: DepthMap::from_values(w, h, values),
        overlap_fraction: landed as f64 / total as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(40.0, 40.0, 31.5, 23.5, 64, 48).unwrap()
    }

    fn plane(z: f32) -> DepthMap {
        let k = k();
        DepthMap::from_fn(k.width, k.height, |_, _| Some(z))
    }

    #[test]
    fn identity_warp_is_exact() {
        let k = k();
        let mut d = DepthMap::from_fn(k.width, k.height, |c, r| Some(10.0 + (c * 3 + r) as f32 * 0.1));
        d.set(5, 5, None);
        let out = warp_depth(&d, &Pose::identity(), &k).unwrap();
        assert_eq!(out.overlap_fraction, 1.0);
        assert_eq!(out.depth, d);
        let again = warp_depth(&out.depth, &Pose::identity(), &k).unwrap();
        assert_eq!(again.depth, out.depth);
    }

    #[test]
    fn forward_motion_reduces_plane_depth() {
        // Camera advances 5 mm along its optical axis: points move to z - 5.
        let k = k();
        let d = plane(100.0);
        let rel = Pose::from_translation(Vector3::new(0.0, 0.0, -5.0));
        let out = warp_depth(&d, &rel, &k).unwrap();
        let mut seen = 0;
        for row in 0..k.height {
            for col in 0..k.width {
                if let Some(z) = out.depth.get(col, row) {
                    assert_eq!(z, 95.0);
                    seen += 1;
                }
            }
        }
        assert!(seen > 0);
        // Moving closer magnifies the image; edge pixels leave the frame.
        assert!(out.overlap_fraction < 1.0 && out.overlap_fraction > 0.8);
    }

    #[test]
    fn facing_away_has_no_overlap() {
        let k = k();
        let d = plane(50.0);
        let rel = Pose::new(
            crate::se3::so3_exp(&Vector3::new(0.0, std::f64::consts::PI, 0.0)),
            Vector3::zeros(),
        );
        let out = warp_depth(&d, &rel, &k).unwrap();
        assert_eq!(out.overlap_fraction, 0.0);
        assert_eq!(out.depth.valid_count(), 0);
    }

    #[test]
    fn empty_depth_rejected() {
        let k = k();
        let d = DepthMap::empty(k.width, k.height);
        assert!(matches!(
            warp_depth(&d, &Pose::identity(), &k),
            Err(Error::EmptyDepth)
        ));
    }

    #[test]
    fn pfm_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let mut d = DepthMap::from_fn(7, 5, |c, r| Some(1.0 / (1.0 + c as f32) + r as f32 * 3.3));
        d.set(2, 3, None);
        d.write_pfm(&path).unwrap();
        let back = DepthMap::read_pfm(&path).unwrap();
        assert_eq!(back, d);
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"Pf\n7 5\n-1.0\n"));
    }

    #[test]
    fn pfm_rejects_truncated_data() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"Pf\n2 2\n-1.0\n\0\0\0\0").unwrap();
        assert!(matches!(DepthMap::read_pfm(&path), Err(Error::Parse { .. })));
    }
}
