//! Pose, wall-clearance and combined refinement objectives.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::se3::{geodesic_distance, Pose};

/// Translations are compared in meters inside [`pose_loss`].
pub const MM_PER_M: f64 = 1000.0;

/// Below this norm (meters) a translation has no usable direction.
pub const MIN_DIRECTION_NORM_M: f64 = 1e-6;

/// Floor on the interior clearance inside the log barrier (mm).
pub const CLEARANCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseLossWeights {
    pub lambda_t: f64,
    pub lambda_rot: f64,
    pub lambda_tm: f64,
}

impl Default for PoseLossWeights {
    fn default() -> Self {
        Self {
            lambda_t: 1.0,
            lambda_rot: 1.0,
            lambda_tm: 100.0,
        }
    }
}

/// Unweighted pose-loss terms and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseLoss {
    /// Angle between the two translation vectors (rad).
    pub direction: f64,
    /// Geodesic angle between the rotations (rad).
    pub rotation: f64,
    /// Absolute difference of translation norms (m).
    pub magnitude: f64,
    pub total: f64,
}

/// Distance between a predicted and a reference pose.
///
/// `direction` is 0 when either translation is shorter than
/// [`MIN_DIRECTION_NORM_M`]; the magnitude term still applies.
pub fn pose_loss(pred: &Pose, gt: &Pose, w: &PoseLossWeights) -> PoseLoss {
    let tp = pred.translation() / MM_PER_M;
    let tg = gt.translation() / MM_PER_M;
    let (np, ng) = (tp.norm(), tg.norm());
    let direction = if np < MIN_DIRECTION_NORM_M || ng < MIN_DIRECTION_NORM_M {
        0.0
    } else {
        (tp.dot(&tg) / (np * ng)).clamp(-1.0, 1.0).acos()
    };
    let rotation = geodesic_distance(pred.rotation(), gt.rotation());
    let magnitude = (np - ng).abs();
    PoseLoss {
        direction,
        rotation,
        magnitude,
        total: w.lambda_t * direction + w.lambda_rot * rotation + w.lambda_tm * magnitude,
    }
}

/// Difficulty bucket of a registration problem, keyed by its pose loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];
    pub const EASY_BELOW: f64 = 0.4;
    pub const MEDIUM_BELOW: f64 = 0.8;
    /// Losses at or above this are outside the benchmark range.
    pub const HARD_BELOW: f64 = 1.6;

    /// `None` for losses at or above [`Self::HARD_BELOW`] or non-finite.
    pub fn from_loss(loss: f64) -> Option<Difficulty> {
        if !(loss >= 0.0) {
            return None;
        }
        if loss < Self::EASY_BELOW {
            Some(Difficulty::Easy)
        } else if loss < Self::MEDIUM_BELOW {
            Some(Difficulty::Medium)
        } else if loss < Self::HARD_BELOW {
            Some(Difficulty::Hard)
        } else {
            None
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Difficulty {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::InvalidParams(format!("unknown difficulty {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdfLossParams {
    pub w_in: f64,
    pub w_near: f64,
    pub w_out: f64,
    /// Safety margin from the wall (mm).
    pub tau: f64,
    /// Sharpness of the interior softplus (1/mm).
    pub gamma: f64,
}

impl Default for SdfLossParams {
    fn default() -> Self {
        Self {
            w_in: 1.0,
            w_near: 1.0,
            w_out: 1.0,
            tau: 1.0,
            gamma: 1.0,
        }
    }
}

impl SdfLossParams {
    pub fn validate(&self) -> Result<(), Error> {
        let ok = [self.w_in, self.w_near, self.w_out, self.gamma]
            .iter()
            .all(|v| *v >= 0.0 && v.is_finite())
            && self.tau > 0.0
            && self.tau.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("bad sdf loss parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfLossTerms {
    pub inner: f64,
    pub near: f64,
    pub outer: f64,
}

impl SdfLossTerms {
    pub fn total(&self) -> f64 {
        self.inner + self.near + self.outer
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Weighted terms of the wall-clearance loss at signed distance `s` (mm).
///
/// The barrier uses the interior clearance `max(-s, CLEARANCE_EPS)` and is
/// active only while that clearance is below `tau`.
pub fn sdf_loss_terms(s: f64, p: &SdfLossParams) -> SdfLossTerms {
    let sp = softplus(p.gamma * (s + p.tau));
    let clearance = (-s).max(CLEARANCE_EPS);
    SdfLossTerms {
        inner: p.w_in * sp * sp,
        near: p.w_near * (-(clearance / p.tau).ln()).max(0.0),
        outer: p.w_out * s.max(0.0).powi(2),
    }
}

pub fn sdf_loss(s: f64, p: &SdfLossParams) -> f64 {
    sdf_loss_terms(s, p).total()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineLossWeights {
    pub lambda_r: f64,
    pub lambda_s: f64,
}

impl Default for RefineLossWeights {
    fn default() -> Self {
        Self {
            lambda_r: 1.0,
            lambda_s: 0.1,
        }
    }
}

impl RefineLossWeights {
    pub fn combine(&self, render: f64, sdf: f64) -> f64 {
        self.lambda_r * render + self.lambda_s * sdf
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::so3_exp;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn pose_loss_examples() {
        let w = PoseLossWeights::default();
        let a = Pose::new(so3_exp(&Vector3::new(0.1, 0.2, 0.3)), Vector3::new(4.0, 5.0, 6.0));
        assert_eq!(pose_loss(&a, &a, &w).total, 0.0);

        let axis = Vector3::new(1.0, -2.0, 0.5).normalize();
        let b = Pose::new(a.rotation() * so3_exp(&(axis * 0.3)), *a.translation());
        assert_relative_eq!(pose_loss(&b, &a, &w).total, 0.3, epsilon = 1e-12);

        let gt = Pose::from_translation(Vector3::new(10.0, 0.0, 0.0));
        let pred = Pose::from_translation(Vector3::new(0.0, 10.0, 0.0));
        let l = pose_loss(&pred, &gt, &w);
        assert_relative_eq!(l.total, FRAC_PI_2, epsilon = 1e-12);
        assert_eq!(l.magnitude, 0.0);
    }

    #[test]
    fn zero_translation_has_no_direction() {
        let w = PoseLossWeights::default();
        let l = pose_loss(
            &Pose::identity(),
            &Pose::from_translation(Vector3::new(0.0, 3.0, 4.0)),
            &w,
        );
        assert_eq!(l.direction, 0.0);
        assert_relative_eq!(l.total, 100.0 * 0.005, epsilon = 1e-12);
    }

    #[test]
    fn difficulty_buckets() {
        assert_eq!(Difficulty::from_loss(0.0), Some(Difficulty::Easy));
        assert_eq!(Difficulty::from_loss(0.3999), Some(Difficulty::Easy));
        assert_eq!(Difficulty::from_loss(0.4), Some(Difficulty::Medium));
        assert_eq!(Difficulty::from_loss(0.55), Some(Difficulty::Medium));
        assert_eq!(Difficulty::from_loss(0.8), Some(Difficulty::Hard));
        assert_eq!(Difficulty::from_loss(1.5999), Some(Difficulty::Hard));
        assert_eq!(Difficulty::from_loss(1.6), None);
        assert_eq!(Difficulty::from_loss(f64::NAN), None);
        for d in Difficulty::ALL {
            assert_eq!(d.as_str().parse::<Difficulty>().unwrap(), d);
        }
    }

    #[test]
    fn sdf_loss_examples() {
        let p = SdfLossParams::default();
        // Deep inside: only a vanishing softplus tail remains.
        let deep = sdf_loss_terms(-10.0, &p);
        assert_relative_eq!(deep.inner, 1.5229e-8, max_relative = 1e-3);
        assert_eq!(deep.near, 0.0);
        assert_eq!(deep.outer, 0.0);
        // On the wall the barrier sees the clearance floor.
        let wall = sdf_loss_terms(0.0, &p);
        assert_relative_eq!(wall.near, -(1e-6f64).ln(), epsilon = 1e-12);
        assert!(wall.total() > 10.0);
        // Outside.
        let out = sdf_loss_terms(2.0, &p);
        assert_eq!(out.outer, 4.0);
        assert_relative_eq!(out.inner, softplus(3.0).powi(2), epsilon = 1e-12);
        assert_relative_eq!(out.near, -(1e-6f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert_relative_eq!(softplus(0.0), 2f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn deeper_never_costs_more() {
        let p = SdfLossParams::default();
        let mut prev = f64::INFINITY;
        for i in 0..2000 {
            let s = -p.tau - 0.01 * i as f64;
            let l = sdf_loss(s, &p);
            assert!(l <= prev);
            prev = l;
        }
    }
}
