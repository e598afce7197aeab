//! Airway centerlines and camera pose sampling along them.
//!
//! On disk a centerline is JSON:
//! `{"branches": [{"parent": null, "points": [[x, y, z], ...]}, ...]}`
//! with parents listed before their children.

use std::path::Path;

use nalgebra::{Matrix3, Point3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{sdf, AirwayMesh};
use crate::error::{Error, Result};
use crate::se3::Pose;

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub points: Vec<Point3<f64>>,
    pub parent: Option<usize>,
}

impl Branch {
    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Centerline {
    pub branches: Vec<Branch>,
}

#[derive(Serialize, Deserialize)]
struct BranchJson {
    parent: Option<usize>,
    points: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct CenterlineJson {
    branches: Vec<BranchJson>,
}

/// One sampled camera pose and where it came from.
#[derive(Debug, Clone, Copy)]
pub struct CenterlineSample {
    pub branch: usize,
    pub arc_length: f64,
    pub pose: Pose,
}

impl Centerline {
    pub fn new(branches: Vec<Branch>) -> Result<Self> {
        let cl = Self { branches };
        cl.validate()?;
        Ok(cl)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::InvalidParams("centerline has no branches".into()));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if b.points.len() < 2 {
                return Err(Error::InvalidParams(format!("branch {i} has fewer than 2 points")));
            }
            if let Some(p) = b.parent {
                if p >= i {
                    return Err(Error::InvalidParams(format!(
                        "branch {i} lists parent {p}; parents must come first"
                    )));
                }
            }
            for (k, w) in b.points.windows(2).enumerate() {
                if (w[1] - w[0]).norm() == 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "branch {i}: points {k} and {} coincide",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// Fails unless every centerline point lies strictly inside the mesh.
    pub fn check_inside(&self, mesh: &AirwayMesh) -> Result<()> {
        for (i, b) in self.branches.iter().enumerate() {
            for p in &b.points {
                let s = sdf(mesh, p)?;
                if s.value >= 0.0 {
                    return Err(Error::InvalidParams(format!(
                        "centerline branch {i} point {p:?} is outside the lumen (sdf {:.4})",
                        s.value
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let raw: CenterlineJson =
            serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        Self::new(
            raw.branches
                .into_iter()
                .map(|b| Branch {
                    parent: b.parent,
                    points: b.points.into_iter().map(Point3::from).collect(),
                })
                .collect(),
        )
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let raw = CenterlineJson {
            branches: self
                .branches
                .iter()
                .map(|b| BranchJson {
                    parent: b.parent,
                    points: b.points.iter().map(|p| [p.x, p.y, p.z]).collect(),
                })
                .collect(),
        };
        let text = serde_json::to_string_pretty(&raw).expect("centerline serialize");
        crate::io::write_atomic(path, text.as_bytes())
    }
}

/// Arc-length parameterized polyline.
struct Polyline<'a> {
    points: &'a [Point3<f64>],
    cumulative: Vec<f64>,
}

impl<'a> Polyline<'a> {
    fn new(points: &'a [Point3<f64>]) -> Self {
        let mut cumulative = Vec::with_capacity(points.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in points.windows(2) {
            acc += (w[1] - w[0]).norm();
            cumulative.push(acc);
        }
        Self { points, cumulative }
    }

    fn length(&self) -> f64 {
        *self.cumulative.last().expect("non-empty polyline")
    }

    fn at(&self, s: f64) -> Point3<f64> {
        let s = s.clamp(0.0, self.length());
        let i = match self.cumulative.partition_point(|&c| c <= s) {
            0 => 0,
            n => (n - 1).min(self.points.len() - 2),
        };
        let seg = self.cumulative[i + 1] - self.cumulative[i];
        let f = ((s - self.cumulative[i]) / seg).clamp(0.0, 1.0);
        self.points[i] + (self.points[i + 1] - self.points[i]) * f
    }

    /// Unit tangent by central differences, second-order one-sided at the ends.
    fn tangent(&self, s: f64, h: f64) -> Vector3<f64> {
        let len = self.length();
        let d = if s - h < 0.0 {
            -3.0 * self.at(s).coords + 4.0 * self.at(s + h).coords - self.at(s + 2.0 * h).coords
        } else if s + h > len {
            3.0 * self.at(s).coords - 4.0 * self.at(s - h).coords + self.at(s - 2.0 * h).coords
        } else {
            self.at(s + h) - self.at(s - h)
        };
        d.normalize()
    }
}

/// Camera frame (columns right, down, forward) with `forward` as the optical axis.
fn initial_frame(forward: &Vector3<f64>) -> Matrix3<f64> {
    let axes = [Vector3::x(), Vector3::y(), Vector3::z()];
    let reference = axes
        .iter()
        .min_by(|a, b| a.dot(forward).abs().total_cmp(&b.dot(forward).abs()))
        .expect("three axes");
    frame_from(forward, reference)
}

fn frame_from(forward: &Vector3<f64>, right_hint: &Vector3<f64>) -> Matrix3<f64> {
    let z = forward.normalize();
    let x = (right_hint - z * right_hint.dot(&z)).normalize();
    let y = z.cross(&x);
    Matrix3::from_columns(&[x, y, z])
}

/// Rotates `frame` by the minimal rotation taking its forward axis onto `forward`.
fn transport(frame: &Matrix3<f64>, forward: &Vector3<f64>) -> Matrix3<f64> {
    let z_prev: Vector3<f64> = frame.column(2).into();
    let x_prev: Vector3<f64> = frame.column(0).into();
    let z = forward.normalize();
    let x = match UnitQuaternion::rotation_between(&z_prev, &z) {
        Some(q) => q * x_prev,
        // Exact reversal: any perpendicular axis works; keep the right vector.
        None => UnitQuaternion::from_axis_angle(&Unit::new_normalize(x_prev), std::f64::consts::PI) * x_prev,
    };
    frame_from(&z, &x)
}

/// Samples camera poses every `spacing` mm of arc length along each branch.
///
/// The optical axis follows the local tangent; roll is carried forward by
/// parallel transport so consecutive frames never flip. A branch shorter
/// than `spacing` contributes its midpoint only.
pub fn sample_centerline(cl: &Centerline, spacing: f64) -> Result<Vec<CenterlineSample>> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidParams(format!("spacing must be positive, got {spacing}")));
    }
    cl.validate()?;
    let mut last_frame: Vec<Option<Matrix3<f64>>> = vec![None; cl.branches.len()];
    let mut out = Vec::new();
    for (bi, branch) in cl.branches.iter().enumerate() {
        let line = Polyline::new(&branch.points);
        let len = line.length();
        let h = (0.05 * spacing).min(0.25 * len);
        let stations: Vec<f64> = if len < spacing {
            vec![0.5 * len]
        } else {
            let n = (len / spacing + 1e-9).floor() as usize;
            (0..=n).map(|k| k as f64 * spacing).collect()
        };
        let mut frame: Option<Matrix3<f64>> = branch.parent.and_then(|p| last_frame[p]);
        for s in stations {
            let forward = line.tangent(s, h);
            let r = match &frame {
                Some(f) => transport(f, &forward),
                None => initial_frame(&forward),
            };
            frame = Some(r);
            out.push(CenterlineSample {
                branch: bi,
                arc_length: s,
                pose: Pose::new(r, line.at(s).coords),
            });
        }
        last_frame[bi] = frame;
    }
    Ok(out)
}

/// Poses only; see [`sample_centerline`].
pub fn sample_centerline_poses(cl: &Centerline, spacing: f64) -> Result<Vec<Pose>> {
    Ok(sample_centerline(cl, spacing)?.into_iter().map(|s| s.pose).collect())
}
