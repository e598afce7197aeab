use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use super::intersect::{closest_point_on_triangle, intersect_relative, Ray, Shear};
use super::AirwayMesh;
use crate::camera::CameraIntrinsics;
use crate::depth::DepthMap;
use crate::se3::Pose;

/// Triangle vertices nearer the image plane than this are clipped before
/// projection (mm).
const Z_CLIP: f64 = 1e-6;

/// Relative slack on the camera-space edge pre-test.
const EDGE_MARGIN: f64 = 1e-9;

/// Ray-casts a z-depth image of `mesh` from camera pose `pose`.
///
/// One ray per pixel center; the nearest hit (either face) gives the depth.
/// Pixels whose ray misses the surface are invalid.
///
/// Work is organized per triangle: each triangle is projected, and only the
/// pixels inside its (padded) screen rectangle that pass a conservative
/// camera-space edge test are intersected with the exact watertight test.
/// Each pixel ends with the minimum over every triangle its ray can hit, so
/// the image is bit-identical to [`render_depth_bvh`] and to testing every
/// triangle. Row bands are rendered in parallel; the output does not depend
/// on the thread count.
pub fn render_depth(mesh: &AirwayMesh, pose: &Pose, k: &CameraIntrinsics) -> DepthMap {
    let (w, h) = (k.width, k.height);
    let origin = pose.center();
    let shears: Vec<Shear> = (0..w * h)
        .map(|i| Shear::new(&pose.transform_vector(&k.ray_direction((i % w) as f64, (i / w) as f64))))
        .collect();
    let xs: Vec<f64> = (0..w).map(|c| (c as f64 - k.cx) / k.fx).collect();
    let ys: Vec<f64> = (0..h).map(|r| (r as f64 - k.cy) / k.fy).collect();
    let view = View::new(pose, k, &xs, &ys);
    let cam: Vec<Vector3<f64>> = mesh.vertices().iter().map(|v| view.to_camera(v)).collect();

    let bands = rayon::current_num_threads().clamp(1, h.max(1));
    let rows_per = h.div_ceil(bands).max(1);
    let parts: Vec<Vec<f64>> = (0..bands)
        .into_par_iter()
        .map(|b| {
            let (r0, r1) = ((b * rows_per).min(h), ((b + 1) * rows_per).min(h));
            let mut buf = vec![f64::INFINITY; (r1 - r0) * w];
            if r0 == r1 {
                return buf;
            }
            for (ti, tri) in mesh.triangles().iter().enumerate() {
                let v = tri.map(|i| cam[i as usize]);
                let Some(rect) = view.screen_rect(&v) else {
                    continue;
                };
                let (y0, y1) = (rect.y0.max(r0), rect.y1.min(r1 - 1));
                if y0 > y1 {
                    continue;
                }
                let edges = EdgeTest::new(&v, view.max_slope);
                let [a, bb, c] = mesh.triangle(ti).map(|p| p - origin);
                for row in y0..=y1 {
                    let Some((x0, x1)) = edges.span(ys[row], k, rect.x0, rect.x1) else {
                        continue;
                    };
                    let base = row * w;
                    let out = &mut buf[(row - r0) * w..(row - r0 + 1) * w];
                    for col in x0..=x1 {
                        if let Some(t) = intersect_relative(&shears[base + col], &a, &bb, &c) {
                            if t < out[col] {
                                out[col] = t;
                            }
                        }
                    }
                }
            }
            buf
        })
        .collect();
    let values = parts
        .concat()
        .into_iter()
        .map(|t| if t.is_finite() { t as f32 } else { 0.0 })
        .collect();
    DepthMap::from_values(w, h, values)
}

/// Per-pixel BVH traversal; same image as [`render_depth`].
pub fn render_depth_bvh(mesh: &AirwayMesh, pose: &Pose, k: &CameraIntrinsics) -> DepthMap {
    let rows: Vec<Vec<f32>> = (0..k.height)
        .into_par_iter()
        .map(|row| {
            (0..k.width)
                .map(|col| {
                    // The camera-frame direction has unit z, so t is the z-depth.
                    mesh.closest_hit(&pixel_ray(pose, k, col, row)).map_or(0.0, |t| t as f32)
                })
                .collect()
        })
        .collect();
    DepthMap::from_values(k.width, k.height, rows.concat())
}

struct View<'a> {
    rt: nalgebra::Matrix3<f64>,
    t: Vector3<f64>,
    k: &'a CameraIntrinsics,
    /// Largest |x/z| or |y/z| over pixel centers.
    max_slope: f64,
    /// Triangles passing nearer the camera center than this may cover any pixel.
    near: f64,
}

struct Rect {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
}

impl<'a> View<'a> {
    fn new(pose: &Pose, k: &'a CameraIntrinsics, xs: &[f64], ys: &[f64]) -> Self {
        let sx = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let sy = ys.iter().fold(0.0f64, |m, y| m.max(y.abs()));
        Self {
            rt: pose.rotation().transpose(),
            t: *pose.translation(),
            k,
            max_slope: sx.max(sy),
            // A visible point with z < Z_CLIP lies within this of the center.
            near: 4.0 * Z_CLIP * (1.0 + sx * sx + sy * sy).sqrt(),
        }
    }

    fn to_camera(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rt * (p.coords - self.t)
    }

    fn full(&self) -> Option<Rect> {
        (self.k.width > 0 && self.k.height > 0).then(|| Rect {
            x0: 0,
            x1: self.k.width - 1,
            y0: 0,
            y1: self.k.height - 1,
        })
    }

    /// Pixel rectangle that contains every pixel whose ray can hit the
    /// triangle with camera-frame corners `v`.
    fn screen_rect(&self, v: &[Vector3<f64>; 3]) -> Option<Rect> {
        let zmax = v[0].z.max(v[1].z).max(v[2].z);
        if zmax < -Z_CLIP {
            return None;
        }
        let zmin = v[0].z.min(v[1].z).min(v[2].z);
        let mut pts = [Vector3::zeros(); 4];
        let mut n = 0;
        if zmin >= Z_CLIP {
            pts[..3].copy_from_slice(v);
            n = 3;
        } else {
            let o = Point3::origin();
            let d = (closest_point_on_triangle(&o, &v[0].into(), &v[1].into(), &v[2].into()) - o).norm();
            if d < self.near {
                return self.full();
            }
            for i in 0..3 {
                let (p, q) = (v[i], v[(i + 1) % 3]);
                if p.z >= Z_CLIP {
                    pts[n] = p;
                    n += 1;
                }
                if (p.z >= Z_CLIP) != (q.z >= Z_CLIP) {
                    let s = (Z_CLIP - p.z) / (q.z - p.z);
                    let mut x = p + (q - p) * s;
                    x.z = Z_CLIP;
                    pts[n] = x;
                    n += 1;
                }
            }
            if n == 0 {
                return None;
            }
        }
        let k = self.k;
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in &pts[..n] {
            let u = k.fx * p.x / p.z + k.cx;
            let v = k.fy * p.y / p.z + k.cy;
            umin = fmin(umin, u);
            umax = fmax(umax, u);
            vmin = fmin(vmin, v);
            vmax = fmax(vmax, v);
        }
        let span = |lo: f64, hi: f64, size: usize| -> Option<(usize, usize)> {
            let last = size as f64 - 1.0;
            let (lo, hi) = (fmax(lo - 1.0, 0.0), fmin(hi + 2.0, last));
            // Truncating the clamped values keeps at least one column of slack.
            (lo <= hi).then(|| (lo as usize, hi as usize))
        };
        let (x0, x1) = span(umin, umax, k.width)?;
        let (y0, y1) = span(vmin, vmax, k.height)?;
        Some(Rect { x0, x1, y0, y1 })
    }
}

/// Conservative camera-space test: a ray through `(x, y, 1)` can only hit
/// the triangle if its three edge functions `e_i = n_i . (x, y, 1)` agree
/// in sign up to a rounding margin `m_i`.
///
/// Either every `e_i >= -m_i` (the line meets the triangle in front of the
/// camera) or every `e_i <= m_i` (behind it). On a pixel row each constraint
/// bounds `x` on one side, at `front + slope * y` or `back + slope * y`.
const COLUMN_SLACK: f64 = 1e-6;

struct EdgeTest {
    edges: [Edge; 3],
}

#[derive(Clone, Copy)]
struct Edge {
    /// Sign of `n.x`; zero means the constraint does not depend on `x`.
    sign: i8,
    front: f64,
    back: f64,
    slope: f64,
    // Used when `sign == 0`.
    ny: f64,
    nz: f64,
    m: f64,
}

#[inline(always)]
fn fmin(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

impl EdgeTest {
    fn new(v: &[Vector3<f64>; 3], max_slope: f64) -> Self {
        let scale = EDGE_MARGIN * (1.0 + 2.0 * max_slope);
        let edge = |i: usize, j: usize| {
            let n = v[i].cross(&v[j]);
            let m = scale * v[i].lp_norm(1) * v[j].lp_norm(1);
            let sign = if n.x > 0.0 {
                1
            } else if n.x < 0.0 {
                -1
            } else {
                0
            };
            let inv = if sign == 0 { 0.0 } else { 1.0 / n.x };
            Edge {
                sign,
                front: -(m + n.z) * inv,
                back: (m - n.z) * inv,
                slope: -n.y * inv,
                ny: n.y,
                nz: n.z,
                m,
            }
        };
        Self {
            edges: [edge(1, 2), edge(2, 0), edge(0, 1)],
        }
    }

    /// Columns in `[lo, hi]` of the row at slope `y` that pass the test.
    #[inline]
    fn span(&self, y: f64, k: &CameraIntrinsics, lo: usize, hi: usize) -> Option<(usize, usize)> {
        let (mut f0, mut f1) = (f64::NEG_INFINITY, f64::INFINITY);
        let (mut b0, mut b1) = (f64::NEG_INFINITY, f64::INFINITY);
        for e in &self.edges {
            match e.sign {
                1 => {
                    f0 = fmax(f0, e.front + e.slope * y);
                    b1 = fmin(b1, e.back + e.slope * y);
                }
                -1 => {
                    f1 = fmin(f1, e.front + e.slope * y);
                    b0 = fmax(b0, e.back + e.slope * y);
                }
                _ => {
                    let c = e.ny * y + e.nz;
                    if c < -e.m {
                        f1 = f64::NEG_INFINITY;
                    }
                    if c > e.m {
                        b1 = f64::NEG_INFINITY;
                    }
                }
            }
        }
        let (mut xmin, mut xmax) = (f64::INFINITY, f64::NEG_INFINITY);
        if f0 <= f1 {
            (xmin, xmax) = (f0, f1);
        }
        if b0 <= b1 {
            (xmin, xmax) = (fmin(xmin, b0), fmax(xmax, b1));
        }
        // The edge margins already dominate rounding in the pixel mapping;
        // COLUMN_SLACK only guards the conversion itself.
        let a = fmax(xmin * k.fx + k.cx - COLUMN_SLACK, lo as f64);
        let b = fmin(xmax * k.fx + k.cx + COLUMN_SLACK, hi as f64);
        if !(a <= b) {
            return None;
        }
        let mut c0 = a as usize;
        if (c0 as f64) < a {
            c0 += 1;
        }
        let c1 = b as usize;
        (c0 <= c1).then_some((c0, c1))
    }
}

/// Camera-space ray through pixel `(col, row)` expressed in world coordinates.
pub fn pixel_ray(pose: &Pose, k: &CameraIntrinsics, col: usize, row: usize) -> Ray {
    Ray::new(
        pose.center(),
        pose.transform_vector(&k.ray_direction(col as f64, row as f64)),
    )
}
