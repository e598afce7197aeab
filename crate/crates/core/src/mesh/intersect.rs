//! Ray/triangle and point/triangle primitives.

use nalgebra::{Point3, Vector3};

/// Per-direction constants of the watertight intersection test: the
/// dominant axis `kz`, the other two axes and the shear that maps the
/// direction onto `+kz`.
#[derive(Debug, Clone, Copy)]
pub struct Shear {
    k: [u8; 3],
    s: [f64; 3],
}

impl Shear {
    pub fn new(dir: &Vector3<f64>) -> Self {
        let kz = dir.iamax();
        let mut kx = (kz + 1) % 3;
        let mut ky = (kx + 1) % 3;
        if dir[kz] < 0.0 {
            std::mem::swap(&mut kx, &mut ky);
        }
        Self {
            k: [kx as u8, ky as u8, kz as u8],
            s: [dir[kx] / dir[kz], dir[ky] / dir[kz], 1.0 / dir[kz]],
        }
    }
}

/// A ray with the shear constants of the watertight intersection test
/// precomputed. Directions need not be unit length; hit parameters are in
/// units of the direction vector.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Point3<f64>,
    pub dir: Vector3<f64>,
    pub(crate) inv_dir: Vector3<f64>,
    pub(crate) shear: Shear,
}

impl Ray {
    pub fn new(origin: Point3<f64>, dir: Vector3<f64>) -> Self {
        Self {
            origin,
            dir,
            inv_dir: dir.map(|d| 1.0 / d),
            shear: Shear::new(&dir),
        }
    }

    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

/// Watertight ray/triangle intersection (shear-and-scale formulation).
///
/// Returns the hit parameter `t > 0`. Rays through a shared edge or vertex
/// hit at least one of the adjacent triangles, so closed meshes have no
/// cracks. Both faces are hit (no culling).
#[inline]
pub fn intersect_triangle(ray: &Ray, v0: &Point3<f64>, v1: &Point3<f64>, v2: &Point3<f64>) -> Option<f64> {
    intersect_relative(&ray.shear, &(v0 - ray.origin), &(v1 - ray.origin), &(v2 - ray.origin))
}

/// [`intersect_triangle`] with the corners already given relative to the
/// ray origin.
#[inline]
pub fn intersect_relative(sh: &Shear, a: &Vector3<f64>, b: &Vector3<f64>, c: &Vector3<f64>) -> Option<f64> {
    let [kx, ky, kz] = sh.k.map(usize::from);
    let [sx, sy, sz] = sh.s;

    let ax = a[kx] - sx * a[kz];
    let ay = a[ky] - sy * a[kz];
    let bx = b[kx] - sx * b[kz];
    let by = b[ky] - sy * b[kz];
    let cx = c[kx] - sx * c[kz];
    let cy = c[ky] - sy * c[kz];

    let u = cx * by - cy * bx;
    let v = ax * cy - ay * cx;
    let w = bx * ay - by * ax;

    if (u < 0.0 || v < 0.0 || w < 0.0) && (u > 0.0 || v > 0.0 || w > 0.0) {
        return None;
    }
    let det = u + v + w;
    if det == 0.0 {
        return None;
    }
    let az = sz * a[kz];
    let bz = sz * b[kz];
    let cz = sz * c[kz];
    let t_scaled = u * az + v * bz + w * cz;
    if (det < 0.0 && t_scaled >= 0.0) || (det > 0.0 && t_scaled <= 0.0) {
        return None;
    }
    Some(t_scaled / det)
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_point_on_triangle(
    p: &Point3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Point3<f64> {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
