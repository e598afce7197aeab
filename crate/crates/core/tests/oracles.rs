mod common;

use bronchonav::benchmark::phantom::{cylinder, CylinderParams};
use bronchonav::benchmark::{make_phantom, PhantomKind, PhantomParams};
use bronchonav::mesh::render_depth_bvh;
use bronchonav::se3::rotation_xyz;
use bronchonav::{metric_nc, metric_si, msssim, render_depth, sdf, AirwayMesh, CameraIntrinsics, DepthMap, Pose};
use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn small_camera() -> CameraIntrinsics {
    CameraIntrinsics::default().scaled(32, 32)
}

fn assert_bit_equal(a: &DepthMap, b: &DepthMap, what: &str) {
    assert_eq!(a.width(), b.width());
    for (i, (x, y)) in a.values().iter().zip(b.values()).enumerate() {
        assert_eq!(x.to_bits(), y.to_bits(), "{what}: pixel {i}: {x} vs {y}");
    }
}

#[test]
fn renders_match_brute_force_bit_for_bit() {
    let k = small_camera();
    for kind in [PhantomKind::Cylinder, PhantomKind::YBranch] {
        let (mesh, _) = make_phantom(&PhantomParams::default_for(kind)).unwrap();
        for (i, pose) in common::lumen_poses(&mesh, 7, 4).iter().enumerate() {
            let brute = common::brute_force_render(&mesh, pose, &k);
            assert!(brute.valid_count() > 0);
            assert_bit_equal(&render_depth(&mesh, pose, &k), &brute, &format!("{kind:?} pose {i} binned"));
            assert_bit_equal(&render_depth_bvh(&mesh, pose, &k), &brute, &format!("{kind:?} pose {i} bvh"));
        }
    }
}

#[test]
fn cylinder_depth_matches_closed_form() {
    let params = CylinderParams::default();
    let (mesh, _) = cylinder(&params).unwrap();
    let k = CameraIntrinsics::default();
    let poses = [
        (60.0, Vector3::zeros()),
        (100.0, Vector3::new(0.0, 0.0, 0.7)),
        (80.0, Vector3::new(0.4, -0.2, 0.1)),
        (120.0, Vector3::new(1.2, 0.3, -0.5)),
        (75.0, Vector3::new(3.0, 0.0, 0.0)),
    ];
    for (z, angles) in poses {
        let pose = Pose::new(rotation_xyz(&angles), Vector3::new(0.0, 0.0, z));
        let depth = render_depth(&mesh, &pose, &k);
        let mut worst: f64 = 0.0;
        for r in 0..k.height {
            for c in 0..k.width {
                let expected = common::analytic_cylinder_depth(&params, &pose, &k.ray_direction(c as f64, r as f64));
                let got = depth.get(c, r).expect("closed tube covers every pixel") as f64;
                worst = worst.max((got - expected).abs() / expected);
            }
        }
        assert!(worst < 0.005, "z {z} angles {angles:?}: worst relative error {worst}");
    }
}

#[test]
fn depth_along_the_axis_reaches_the_far_cap() {
    let params = CylinderParams::default();
    let (mesh, _) = cylinder(&params).unwrap();
    let k = CameraIntrinsics::default();
    let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 60.0));
    let d = render_depth(&mesh, &pose, &k);
    // Pixel (111.5, 111.5) is between pixel centers; (112, 112) is 0.005 rad off axis.
    let v = d.get(112, 112).unwrap() as f64;
    assert!((v - 90.0).abs() < 1e-9, "{v}");
}

fn check_sdf(mesh: &AirwayMesh, seed: u64, n: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = mesh.bounds();
    let pad = 3.0;
    let (mut inside, mut outside) = (0, 0);
    for _ in 0..n {
        let p = Point3::from(Vector3::from_fn(|i, _| rng.gen_range(b.min[i] - pad..b.max[i] + pad)));
        let expected = common::brute_force_sdf(mesh, &p);
        let got = sdf(mesh, &p).unwrap().value;
        assert_eq!(got < 0.0, expected < 0.0, "sign at {p:?}: {got} vs {expected}");
        assert!((got - expected).abs() < 1e-9, "distance at {p:?}: {got} vs {expected}");
        if expected < 0.0 {
            inside += 1;
        } else {
            outside += 1;
        }
    }
    assert!(inside > 20 && outside > 20, "{inside} inside, {outside} outside");
}

#[test]
fn sdf_matches_brute_force_on_cylinder() {
    let (mesh, _) = make_phantom(&PhantomParams::default_for(PhantomKind::Cylinder)).unwrap();
    check_sdf(&mesh, 11, 1000);
}

#[test]
fn sdf_matches_brute_force_on_y_branch() {
    let (mesh, _) = make_phantom(&PhantomParams::default_for(PhantomKind::YBranch)).unwrap();
    check_sdf(&mesh, 12, 1000);
}

#[test]
fn sdf_on_axis_is_minus_radius() {
    let (mesh, _) = cylinder(&CylinderParams::default()).unwrap();
    for z in [60.0, 100.0, 140.0] {
        let v = sdf(&mesh, &Point3::new(0.0, 0.0, z)).unwrap().value;
        assert!((v + 8.0).abs() < 0.08, "{v}");
    }
}

#[test]
fn winding_oracle_sanity() {
    let (mesh, _) = cylinder(&CylinderParams::default()).unwrap();
    assert!((common::winding_number(&mesh, &Point3::new(0.0, 0.0, 100.0)) - 1.0).abs() < 1e-9);
    assert!(common::winding_number(&mesh, &Point3::new(20.0, 0.0, 100.0)).abs() < 1e-9);
}

#[test]
fn msssim_agrees_with_direct_reference() {
    let sizes = [(176, 176), (192, 180), (224, 224), (200, 190), (181, 233)];
    for i in 0..10u64 {
        let (w, h) = sizes[i as usize % sizes.len()];
        let a = common::textured_depth(w, h, i);
        let mut b = common::textured_depth(w, h, i + 100);
        if i % 2 == 0 {
            // Closer pairs exercise the high end of the range.
            b = a.map_valid(|j, v| v * (1.0 + 0.02 * ((j % 13) as f32 / 13.0 - 0.5)));
        }
        if i % 3 == 0 {
            // A masked block larger than the coarsest window.
            b = DepthMap::from_fn(w, h, |c, r| {
                (!(c > w / 3 && c < w / 2 && r > h / 4)).then(|| b.get(c, r)).flatten()
            });
        }
        let got = msssim(&a, &b).unwrap();
        let expected = common::reference_msssim(&a, &b);
        assert!((got - expected).abs() < 1e-4, "pair {i}: {got} vs {expected}");
    }
}

#[test]
fn msssim_decreases_with_noise() {
    let d = common::textured_depth(224, 224, 5);
    let (lo, hi) = d
        .values()
        .iter()
        .zip(d.valid_mask())
        .filter(|(_, &m)| m)
        .fold((f32::MAX, f32::MIN), |(lo, hi), (&v, _)| (lo.min(v), hi.max(v)));
    let range = (hi - lo) as f64;
    let mut last = 1.0;
    for frac in [0.01, 0.05, 0.10] {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let normal = Normal::new(0.0, frac * range).unwrap();
        let noisy = d.map_valid(|_, v| v + normal.sample(&mut rng) as f32);
        let s = msssim(&d, &noisy).unwrap();
        assert!(s > 0.0 && s < last, "sigma {frac}: {s} after {last}");
        last = s;
    }
}

#[test]
fn si_of_log_normal_noise_estimates_variance() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let normal = Normal::new(0.0, 0.1).unwrap();
    let reference = common::textured_depth(100, 100, 1);
    let pred = reference.map_valid(|_, v| v * (normal.sample(&mut rng) as f32).exp());
    let si = metric_si(&pred, &reference).unwrap();
    assert!((si - 0.01).abs() < 0.002, "{si}");
}

#[test]
fn nc_is_unchanged_by_depth_scaling() {
    let (mesh, _) = cylinder(&CylinderParams::default()).unwrap();
    let k = CameraIntrinsics::default();
    let pose = Pose::new(rotation_xyz(&Vector3::new(0.3, 0.0, 0.0)), Vector3::new(0.0, 0.0, 70.0));
    let d = render_depth(&mesh, &pose, &k);
    assert!((metric_nc(&d, &d, &k).unwrap() - 1.0).abs() < 1e-12);
    // Scaling z-depth scales the back-projected cloud about the camera
    // center, which leaves every normal unchanged.
    for c in [0.5, 1.5, 3.0] {
        let v = metric_nc(&d.scaled(c), &d, &k).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "scale {c}: {v}");
    }
}
