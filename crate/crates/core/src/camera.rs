//! Pinhole intrinsics and the projection / back-projection pair.
//!
//! Pixel `(col, row)` has its center at continuous coordinates `(col, row)`.

use std::path::Path;

use nalgebra::{Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    /// 224x224 with a roughly 97 degree field of view.
    fn default() -> Self {
        Self {
            fx: 100.0,
            fy: 100.0,
            cx: 111.5,
            cy: 111.5,
            width: 224,
            height: 224,
        }
    }
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidParams(format!(
                "focal lengths must be positive and finite (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParams("image size must be non-zero".into()));
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err(Error::InvalidParams(format!(
                "principal point ({}, {}) outside {}x{} image",
                self.cx, self.cy, self.width, self.height
            )));
        }
        Ok(())
    }

    /// Same field of view at a different resolution.
    pub fn scaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
        }
    }

    /// Unnormalized ray direction `((u - cx)/fx, (v - cy)/fy, 1)`; a point at
    /// parameter `s` along it has z-depth exactly `s`.
    pub fn ray_direction(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let k: Self = serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        k.validate()?;
        Ok(k)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("intrinsics serialize");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Pinhole projection of a camera-frame point.
pub fn project(p: &Point3<f64>, k: &CameraIntrinsics) -> Result<Point2<f64>> {
    if !(p.z > 0.0) {
        return Err(Error::NonPositiveDepth(p.z));
    }
    Ok(Point2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Camera-frame point at z-depth `depth` seen through pixel `pix`.
pub fn back_project(pix: &Point2<f64>, depth: f64, k: &CameraIntrinsics) -> Result<Point3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(Point3::new(
        depth * (pix.x - k.cx) / k.fx,
        depth * (pix.y - k.cy) / k.fy,
        depth,
    ))
}
