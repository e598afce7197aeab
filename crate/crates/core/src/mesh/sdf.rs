use nalgebra::{Point3, Vector3};

use super::intersect::Ray;
use super::AirwayMesh;
use crate::error::{Error, Result};

/// Signed distance (negative inside the closed surface) and its gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdfSample {
    pub value: f64,
    /// Unit direction of increasing signed distance.
    pub gradient: Vector3<f64>,
}

/// Fixed unit directions for the parity vote, chosen away from axes and diagonals.
const PARITY_DIRECTIONS: [[f64; 3]; 3] = [
    [0.3139677124560383, 0.5923504183427198, 0.7419873701245375],
    [-0.793040668181139, 0.3487839055204427, 0.49943596772831605],
    [0.16579401584193715, -0.8582830240190805, 0.4856568696020535],
];

/// Hits closer together than this along a ray count once (shared edges).
const HIT_MERGE_EPS: f64 = 1e-10;

/// Signed distance from `p` to the surface of a watertight mesh.
///
/// The magnitude is the exact point-to-triangle distance. The sign is a
/// majority vote of crossing parity over three fixed rays.
pub fn sdf(mesh: &AirwayMesh, p: &Point3<f64>) -> Result<SdfSample> {
    if !mesh.is_watertight() {
        return Err(Error::NotWatertight);
    }
    let (q, tri) = mesh.closest_point(p);
    let offset = p - q;
    let dist = offset.norm();
    let inside = dist > 0.0 && is_inside(mesh, p);
    let sign = if inside { -1.0 } else { 1.0 };
    let gradient = if dist > 0.0 {
        offset * (sign / dist)
    } else {
        mesh.normals()[tri]
    };
    Ok(SdfSample {
        value: sign * dist,
        gradient,
    })
}

fn is_inside(mesh: &AirwayMesh, p: &Point3<f64>) -> bool {
    let mut votes = 0;
    let mut hits = Vec::new();
    for d in PARITY_DIRECTIONS {
        hits.clear();
        mesh.bvh().all_hits(&Ray::new(*p, Vector3::from(d)), &mut hits);
        if crossing_count(&mut hits) % 2 == 1 {
            votes += 1;
        }
    }
    votes >= 2
}

fn crossing_count(hits: &mut [f64]) -> usize {
    hits.sort_by(|a, b| a.total_cmp(b));
    let mut n = 0;
    let mut last = f64::NEG_INFINITY;
    for &t in hits.iter() {
        if t - last > HIT_MERGE_EPS * t.max(1.0) {
            n += 1;
        }
        last = t;
    }
    n
}
