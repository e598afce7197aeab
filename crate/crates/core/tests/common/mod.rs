//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use bronchonav::benchmark::phantom::CylinderParams;
use bronchonav::camera::CameraIntrinsics;
use bronchonav::mesh::{intersect_triangle, pixel_ray};
use bronchonav::se3::rotation_xyz;
use bronchonav::{sdf, AirwayMesh, DepthMap, Pose};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Depth image from testing every pixel ray against every triangle.
pub fn brute_force_render(mesh: &AirwayMesh, pose: &Pose, k: &CameraIntrinsics) -> DepthMap {
    let mut values = Vec::with_capacity(k.width * k.height);
    for row in 0..k.height {
        for col in 0..k.width {
            let ray = pixel_ray(pose, k, col, row);
            let mut best = f64::INFINITY;
            for i in 0..mesh.triangles().len() {
                let [a, b, c] = mesh.triangle(i);
                if let Some(t) = intersect_triangle(&ray, &a, &b, &c) {
                    best = best.min(t);
                }
            }
            values.push(if best.is_finite() { best as f32 } else { 0.0 });
        }
    }
    DepthMap::from_values(k.width, k.height, values)
}

/// Generalized winding number: the solid angle subtended by the surface
/// divided by 4 pi (1 inside a closed outward-oriented surface, 0 outside).
pub fn winding_number(mesh: &AirwayMesh, p: &Point3<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..mesh.triangles().len() {
        let [a, b, c] = mesh.triangle(i);
        let (a, b, c) = (a - p, b - p, c - p);
        let (la, lb, lc) = (a.norm(), b.norm(), c.norm());
        let num = a.dot(&b.cross(&c));
        let den = la * lb * lc + a.dot(&b) * lc + b.dot(&c) * la + c.dot(&a) * lb;
        total += 2.0 * num.atan2(den);
    }
    total / (4.0 * PI)
}

fn segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Point/triangle distance by plane projection and barycentric test, falling
/// back to the three edges.
pub fn triangle_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> f64 {
    let n = (b - a).cross(&(c - a));
    let n2 = n.norm_squared();
    if n2 > 0.0 {
        let d = (p - a).dot(&n) / n2;
        let q = p - n * d;
        // Barycentric coordinates from sub-triangle areas.
        let u = (b - q).cross(&(c - q)).dot(&n) / n2;
        let v = (c - q).cross(&(a - q)).dot(&n) / n2;
        let w = 1.0 - u - v;
        if u >= 0.0 && v >= 0.0 && w >= 0.0 {
            return (p - q).norm();
        }
    }
    segment_distance(p, a, b)
        .min(segment_distance(p, b, c))
        .min(segment_distance(p, c, a))
}

/// Signed distance by exhaustive search, signed by the winding number.
pub fn brute_force_sdf(mesh: &AirwayMesh, p: &Point3<f64>) -> f64 {
    let d = (0..mesh.triangles().len())
        .map(|i| {
            let [a, b, c] = mesh.triangle(i);
            triangle_distance(p, &a, &b, &c)
        })
        .fold(f64::INFINITY, f64::min);
    if winding_number(mesh, p) > 0.5 {
        -d
    } else {
        d
    }
}

/// Reference masked MS-SSIM: direct 2D windows, no separable filtering.
///
/// Same conventions as the library: dynamic range from the union of valid
/// pixels, invalid pixels filled with the jointly valid mean, windows
/// averaged only where the center is jointly valid, 2x2 mean pooling with a
/// three-of-four validity rule.
pub fn reference_msssim(a: &DepthMap, b: &DepthMap) -> f64 {
    const WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    const WIN: usize = 11;
    let (w, h) = (a.width(), a.height());
    let to_f64 = |d: &DepthMap| d.values().iter().map(|&v| v as f64).collect::<Vec<_>>();
    let (av, bv) = (to_f64(a), to_f64(b));
    let joint: Vec<bool> = (0..w * h).map(|i| a.valid_mask()[i] && b.valid_mask()[i]).collect();

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..w * h {
        for (v, m) in [(av[i], a.valid_mask()[i]), (bv[i], b.valid_mask()[i])] {
            if m {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let range = if hi - lo > 1e-12 { hi - lo } else { 1.0 };
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);

    let n_joint = joint.iter().filter(|&&j| j).count() as f64;
    let fill = |v: &[f64]| {
        let mean = (0..w * h).filter(|&i| joint[i]).map(|i| v[i]).sum::<f64>() / n_joint;
        (0..w * h).map(|i| if joint[i] { v[i] } else { mean }).collect::<Vec<_>>()
    };
    let mut x = fill(&av);
    let mut y = fill(&bv);
    let mut mask = joint;
    let (mut w, mut h) = (w, h);

    let g: Vec<f64> = (0..WIN).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let gs: f64 = g.iter().sum();
    let mut window = [[0.0; WIN]; WIN];
    for (r, row) in window.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = g[r] * g[c] / (gs * gs);
        }
    }

    let mut result = 1.0;
    for (level, weight) in WEIGHTS.iter().enumerate() {
        let (mut s_sum, mut cs_sum, mut n) = (0.0, 0.0, 0usize);
        let (mut s_all, mut cs_all, mut n_all) = (0.0, 0.0, 0usize);
        for r0 in 0..=h - WIN {
            for c0 in 0..=w - WIN {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dr, wrow) in window.iter().enumerate() {
                    for (dc, &g) in wrow.iter().enumerate() {
                        let i = (r0 + dr) * w + c0 + dc;
                        mx += g * x[i];
                        my += g * y[i];
                        xx += g * x[i] * x[i];
                        yy += g * y[i] * y[i];
                        xy += g * x[i] * y[i];
                    }
                }
                let cs = (2.0 * (xy - mx * my) + c2) / ((xx - mx * mx) + (yy - my * my) + c2);
                let s = (2.0 * mx * my + c1) / (mx * mx + my * my + c1) * cs;
                s_all += s;
                cs_all += cs;
                n_all += 1;
                if mask[(r0 + WIN / 2) * w + c0 + WIN / 2] {
                    s_sum += s;
                    cs_sum += cs;
                    n += 1;
                }
            }
        }
        let (s, cs) = if n == 0 {
            (s_all / n_all as f64, cs_all / n_all as f64)
        } else {
            (s_sum / n as f64, cs_sum / n as f64)
        };
        let last = level + 1 == WEIGHTS.len();
        result *= (if last { s } else { cs }).max(0.0).powf(*weight);
        if !last {
            let (nw, nh) = (w / 2, h / 2);
            let pool = |v: &[f64]| {
                let mut out = vec![0.0; nw * nh];
                for r in 0..nh {
                    for c in 0..nw {
                        let i = 2 * r * w + 2 * c;
                        out[r * nw + c] = (v[i] + v[i + 1] + v[i + w] + v[i + w + 1]) / 4.0;
                    }
                }
                out
            };
            let mut m = vec![false; nw * nh];
            for r in 0..nh {
                for c in 0..nw {
                    let i = 2 * r * w + 2 * c;
                    let count = [i, i + 1, i + w, i + w + 1].iter().filter(|&&j| mask[j]).count();
                    m[r * nw + c] = count >= 3;
                }
            }
            x = pool(&x);
            y = pool(&y);
            mask = m;
            w = nw;
            h = nh;
        }
    }
    result.clamp(0.0, 1.0)
}

/// Smooth random-looking depth map with a few invalid pixels.
pub fn textured_depth(w: usize, h: usize, seed: u64) -> DepthMap {
    let s = seed as f32;
    DepthMap::from_fn(w, h, |c, r| {
        let (x, y) = (c as f32, r as f32);
        let hole = ((c * 7 + r * 13 + seed as usize) % 97) == 0;
        (!hole).then(|| {
            30.0 + 8.0 * (x * (0.05 + 0.01 * s)).sin() * (y * 0.08 + s).cos()
                + 3.0 * ((x + y) * 0.21 + 0.5 * s).sin()
                + 0.05 * x
        })
    })
}

/// Random camera poses at least 0.5 mm inside the lumen, any orientation.
pub fn lumen_poses(mesh: &AirwayMesh, seed: u64, n: usize) -> Vec<Pose> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = mesh.bounds();
    let mut out = Vec::new();
    while out.len() < n {
        let p = Point3::from(Vector3::from_fn(|i, _| rng.gen_range(b.min[i]..b.max[i])));
        if sdf(mesh, &p).unwrap().value < -0.5 {
            let angles = Vector3::from_fn(|_, _| rng.gen_range(-3.0..3.0));
            out.push(Pose::new(rotation_xyz(&angles), p.coords));
        }
    }
    out
}

/// z-depth where a ray from a point on the axis of the ideal closed cylinder
/// leaves it.
pub fn analytic_cylinder_depth(p: &CylinderParams, pose: &Pose, dir_cam: &Vector3<f64>) -> f64 {
    let o = pose.center();
    let d = pose.transform_vector(dir_cam);
    let rho = (d.x * d.x + d.y * d.y).sqrt();
    let (z0, z1) = (p.inlet_z, p.inlet_z + p.length);
    let t_wall = if rho > 0.0 { p.radius / rho } else { f64::INFINITY };
    let t_cap = if d.z > 0.0 {
        (z1 - o.z) / d.z
    } else if d.z < 0.0 {
        (z0 - o.z) / d.z
    } else {
        f64::INFINITY
    };
    t_wall.min(t_cap)
}
