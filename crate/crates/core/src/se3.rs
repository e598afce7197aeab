//! Rigid-body pose algebra on SE(3).
//!
//! Poses map camera coordinates to world coordinates (`p_world = R p_cam + t`),
//! so the translation is the camera center in world millimeters. The camera
//! frame is +z forward, +x right, +y down.
//!
//! Tangent vectors are ordered `[rho, phi]`: translational part first, then
//! the rotation vector. Updates are applied on the right, `T <- T exp(xi)`,
//! which perturbs the pose in its own camera frame.

use std::fmt;

use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Below this rotation angle the closed forms switch to Taylor expansions.
const SMALL_ANGLE: f64 = 1e-8;

/// Series cutoff for the second-order Jacobian coefficients; the truncation
/// error there is below 1e-17.
const CANCELLATION_ANGLE: f64 = 1e-3;

/// How many compositions an optimization loop may chain before it has to
/// project the rotation back onto SO(3).
pub const REORTHONORMALIZE_EVERY: usize = 100;

/// Element of se(3): translational part `rho` (mm) and rotation vector `phi` (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentVector {
    pub rho: Vector3<f64>,
    pub phi: Vector3<f64>,
}

impl TangentVector {
    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Self { rho, phi }
    }

    pub fn zero() -> Self {
        Self::new(Vector3::zeros(), Vector3::zeros())
    }

    pub fn from_vector6(v: &Vector6<f64>) -> Self {
        Self::new(
            Vector3::new(v[0], v[1], v[2]),
            Vector3::new(v[3], v[4], v[5]),
        )
    }

    pub fn to_vector6(&self) -> Vector6<f64> {
        Vector6::new(
            self.rho.x, self.rho.y, self.rho.z, self.phi.x, self.phi.y, self.phi.z,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.phi.iter()).all(|v| v.is_finite())
    }
}

/// Rigid transform `[R | t]` with an orthonormal rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let aa = rotation_vector(&self.rotation);
        write!(
            f,
            "Pose(t: [{:.3}, {:.3}, {:.3}] mm, rotvec: [{:.4}, {:.4}, {:.4}] rad)",
            t.x, t.y, t.z, aa.x, aa.y, aa.z
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose from parts. The rotation is trusted to be orthonormal;
    /// use [`Pose::try_new`] for untrusted input.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose, checking `R^T R = I` and `det R = +1` to `tol`.
    pub fn try_new(rotation: Matrix3<f64>, translation: Vector3<f64>, tol: f64) -> Result<Self> {
        if !rotation.iter().chain(translation.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidParams("pose has non-finite entries".into()));
        }
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if ortho > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidParams(format!(
                "rotation is not in SO(3) (|RtR - I| = {ortho:.3e}, det = {det})"
            )));
        }
        Ok(Self::new(rotation, translation))
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn from_quaternion(q: &UnitQuaternion<f64>, t: Vector3<f64>) -> Self {
        Self::new(*q.to_rotation_matrix().matrix(), t)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.translation)
    }

    pub fn quaternion(&self) -> UnitQuaternion<f64> {
        UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation))
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// Right-multiplicative update `self * exp(xi)`.
    pub fn retract(&self, xi: &TangentVector) -> Pose {
        self.compose(&exp_map(xi))
    }

    /// Projects the rotation back onto SO(3) (polar decomposition, `R = U V^T`).
    pub fn orthonormalized(&self) -> Pose {
        Pose {
            rotation: nearest_rotation(&self.rotation),
            translation: self.translation,
        }
    }

    /// Max-abs deviation of `R^T R` from identity.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Matrix3::identity())
            .abs()
            .max()
    }

    pub fn is_finite(&self) -> bool {
        self.rotation
            .iter()
            .chain(self.translation.iter())
            .all(|v| v.is_finite())
    }

    /// Row-major 3x4 `[R | t]`.
    pub fn to_row_major(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [
            r[(0, 0)],
            r[(0, 1)],
            r[(0, 2)],
            t.x,
            r[(1, 0)],
            r[(1, 1)],
            r[(1, 2)],
            t.y,
            r[(2, 0)],
            r[(2, 1)],
            r[(2, 2)],
            t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Pose {
        Pose::new(
            Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]),
            Vector3::new(v[3], v[7], v[11]),
        )
    }

    /// Max-abs difference over all 12 matrix entries.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let a = self.to_row_major();
        let b = other.to_row_major();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Skew-symmetric matrix with `hat(v) w = v x w`.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) exponential (Rodrigues).
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let half = 0.5 * theta;
        let sinc_half = half.sin() / half;
        (theta.sin() / theta, 0.5 * sinc_half * sinc_half)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation angle in `[0, pi]`, stable at both ends of the range.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = 0.5 * vee_antisym(r).norm();
    let c = 0.5 * (r.trace() - 1.0);
    s.atan2(c)
}

/// Geodesic distance `||log(A^T B)||` between two rotations.
pub fn geodesic_distance(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

/// `vee(R - R^T)`; equals `2 sin(theta) a` for axis `a`.
fn vee_antisym(r: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
}

/// Rotation vector of `r`. At exactly pi the sign of the axis is arbitrary.
fn rotation_vector(r: &Matrix3<f64>) -> Vector3<f64> {
    let theta = rotation_angle(r);
    let w = vee_antisym(r);
    if theta < SMALL_ANGLE {
        // sin(theta)/theta ~ 1 - theta^2/6
        return 0.5 * w * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::FRAC_PI_2 {
        return w * (theta / (2.0 * theta.sin()));
    }
    // Large angles: read the axis off the symmetric part, a a^T = (S - cos I) / (1 - cos).
    let c = theta.cos();
    let sym = 0.5 * (r + r.transpose());
    let m = (sym - Matrix3::identity() * c) / (1.0 - c);
    let diag = m.diagonal();
    let i = diag.imax();
    let mut axis: Vector3<f64> = m.column(i).into();
    axis /= axis.norm();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// SO(3) logarithm.
pub fn so3_log(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let theta = rotation_angle(r);
    if std::f64::consts::PI - theta < 1e-9 {
        return Err(Error::AmbiguousLog);
    }
    Ok(rotation_vector(r))
}

/// Left Jacobian `V` coupling rotation into translation.
fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let a = if theta < SMALL_ANGLE {
        0.5 - theta2 / 24.0
    } else {
        let half = 0.5 * theta;
        let sinc_half = half.sin() / half;
        0.5 * sinc_half * sinc_half
    };
    // theta - sin(theta) cancels catastrophically well above SMALL_ANGLE.
    let b = if theta < CANCELLATION_ANGLE {
        1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta2 * theta)
    };
    Matrix3::identity() + k * a + k * k * b
}

fn left_jacobian_inverse(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(phi);
    let b = if theta < CANCELLATION_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half / half.tan()) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * b
}

/// SE(3) exponential.
pub fn exp_map(xi: &TangentVector) -> Pose {
    Pose {
        rotation: so3_exp(&xi.phi),
        translation: left_jacobian(&xi.phi) * xi.rho,
    }
}

/// SE(3) logarithm. Fails with [`Error::AmbiguousLog`] at a half turn.
pub fn log_map(pose: &Pose) -> Result<TangentVector> {
    let phi = so3_log(&pose.rotation)?;
    let rho = left_jacobian_inverse(&phi) * pose.translation;
    Ok(TangentVector { rho, phi })
}

/// Closest rotation in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Rotation built from three per-axis angles composed as `Rx(ax) Ry(ay) Rz(az)`.
pub fn rotation_xyz(angles: &Vector3<f64>) -> Matrix3<f64> {
    so3_exp(&(Vector3::x() * angles.x))
        * so3_exp(&(Vector3::y() * angles.y))
        * so3_exp(&(Vector3::z() * angles.z))
}

/// Inverse of [`rotation_xyz`] for middle angles in `(-pi/2, pi/2)`.
pub fn angles_xyz(r: &Matrix3<f64>) -> Vector3<f64> {
    // R = Rx Ry Rz: R[0,2] = sin(ay), R[1,2] = -sin(ax) cos(ay), R[2,2] = cos(ax) cos(ay),
    // R[0,1] = -cos(ay) sin(az), R[0,0] = cos(ay) cos(az).
    let ay = r[(0, 2)].clamp(-1.0, 1.0).asin();
    let ax = (-r[(1, 2)]).atan2(r[(2, 2)]);
    let az = (-r[(0, 1)]).atan2(r[(0, 0)]);
    Vector3::new(ax, ay, az)
}
