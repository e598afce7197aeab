use bronchonav::benchmark::phantom::{cylinder, CylinderParams};
use bronchonav::benchmark::{generate_case, make_phantom, PhantomKind, PhantomParams};
use bronchonav::losses::Difficulty;
use bronchonav::metrics::pose_errors;
use bronchonav::refine::{batch_refine, Observation};
use bronchonav::se3::rotation_xyz;
use bronchonav::{
    pseudo_depth, refine, refine_with_pseudo_depth, render_depth, sdf, AirwayMesh, CameraIntrinsics, DepthMap,
    Error, GenerateParams, PerturbationSpec, Pose, RefineResult, RefineSettings,
};
use nalgebra::Vector3;

fn settings(text: &str) -> RefineSettings {
    let mut s = RefineSettings::default();
    s.apply_text(text).unwrap();
    s
}

fn longer() -> RefineSettings {
    settings("inner_iters = 5\nouter_iters = 5\ntrans_step = 1.6\nrot_step = 0.06\neps_trans = 0.1\neps_rot = 0.004")
}

fn tube() -> AirwayMesh {
    cylinder(&CylinderParams::default()).unwrap().0
}

/// Camera inside the tube, looking mostly down the axis.
fn tube_gt() -> Pose {
    Pose::new(rotation_xyz(&Vector3::new(0.15, -0.1, 0.0)), Vector3::new(1.0, -0.5, 85.0))
}

/// 2 mm / 0.1 rad off `gt`. Roll about the tube axis is not observable on a
/// circular tube, so the rotation is a tilt.
fn tube_init(gt: &Pose) -> Pose {
    let t = Vector3::new(1.2, -1.0, 1.2).normalize() * 2.0;
    let axis = Vector3::new(1.0, 1.0, 0.0).normalize();
    gt.compose(&Pose::new(rotation_xyz(&(axis * 0.1)), t))
}

fn assert_trace_properties(mesh: &AirwayMesh, r: &RefineResult) {
    let mut last: Option<(usize, f64)> = None;
    for e in &r.loss_trace {
        if let Some((outer, best)) = last {
            if outer == e.outer {
                assert!(e.best_total <= best, "best-so-far rose from {best} to {}", e.best_total);
            }
        }
        assert!(e.best_total <= e.total);
        last = Some((e.outer, e.best_total));
        assert!(sdf(mesh, &e.pose.center()).unwrap().value < 0.0, "traced pose left the lumen");
    }
}

#[test]
fn optimum_is_a_fixed_point() {
    let (mesh, cl) = make_phantom(&PhantomParams::default_for(PhantomKind::YBranch)).unwrap();
    let k = CameraIntrinsics::default();
    let gts = bronchonav::mesh::sample_centerline_poses(&cl, 20.0).unwrap();
    for gt in gts.iter().take(3) {
        let observed = render_depth(&mesh, gt, &k);
        let r = refine(&mesh, &observed, &k, gt, &RefineSettings::default()).unwrap();
        let (t, rot) = pose_errors(&r.final_pose, gt);
        assert!(t <= 0.05 && rot <= 0.002, "moved {t} mm, {rot} rad");
    }
}

#[test]
fn recovers_tube_pose_from_oracle_depth() {
    let mesh = tube();
    let k = CameraIntrinsics::default();
    let gt = tube_gt();
    let init = tube_init(&gt);
    let observed = render_depth(&mesh, &gt, &k);
    let r = refine(&mesh, &observed, &k, &init, &longer()).unwrap();
    let (t, rot) = pose_errors(&r.final_pose, &gt);
    assert!(t < 0.5 && rot < 0.02, "final {t} mm, {rot} rad");
    assert!(r.final_loss <= r.init_loss);
    assert_trace_properties(&mesh, &r);
}

#[test]
fn empty_observation_is_rejected() {
    let mesh = tube();
    let k = CameraIntrinsics::default();
    let observed = DepthMap::empty(k.width, k.height);
    match refine(&mesh, &observed, &k, &tube_gt(), &RefineSettings::default()) {
        Err(Error::EmptyObservation(0)) => {}
        other => panic!("expected EmptyObservation, got {other:?}"),
    }
}

#[test]
fn pseudo_depth_mode_ignores_global_scale() {
    let mesh = tube();
    let k = CameraIntrinsics::default();
    let gt = tube_gt();
    let init = tube_init(&gt);
    let observed = render_depth(&mesh, &gt, &k);
    let oracle = refine(&mesh, &observed, &k, &init, &longer()).unwrap();
    let scaled = refine_with_pseudo_depth(&mesh, &observed.scaled(2.0), &k, &init, &longer()).unwrap();
    let (t_o, _) = pose_errors(&oracle.final_pose, &gt);
    let (t_s, r_s) = pose_errors(&scaled.final_pose, &gt);
    assert!(t_s < 0.5 && r_s < 0.02, "scaled run ended {t_s} mm, {r_s} rad (oracle {t_o} mm)");
}

#[test]
fn tolerates_multiplicative_noise() {
    let mesh = tube();
    let k = CameraIntrinsics::default();
    let gt = tube_gt();
    let init = tube_init(&gt);
    let observed = pseudo_depth(&render_depth(&mesh, &gt, &k), 1.0, 0.05, 3).unwrap();
    let r = refine_with_pseudo_depth(&mesh, &observed, &k, &init, &longer()).unwrap();
    let (t, _) = pose_errors(&r.final_pose, &gt);
    assert!(t < 1.5, "final {t} mm");
    assert_trace_properties(&mesh, &r);
}

#[test]
fn tolerates_dropout() {
    let mesh = tube();
    let k = CameraIntrinsics::default();
    let gt = tube_gt();
    let init = tube_init(&gt);
    let full = render_depth(&mesh, &gt, &k);
    // Drop 30% of pixels in blotches.
    let observed = DepthMap::from_fn(k.width, k.height, |c, r| {
        let h = ((c / 8) * 7919 + (r / 8) * 104729) % 10;
        if h < 3 {
            None
        } else {
            full.get(c, r)
        }
    });
    let dropped = 1.0 - observed.valid_fraction();
    assert!((0.25..0.35).contains(&dropped), "{dropped}");
    let r = refine_with_pseudo_depth(&mesh, &observed, &k, &init, &longer()).unwrap();
    let (t0, _) = pose_errors(&init, &gt);
    let (t, _) = pose_errors(&r.final_pose, &gt);
    assert!(t < 0.5 * t0, "final {t} mm from {t0} mm");
    assert!(r.evaluations > 0);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mesh = tube();
    let k = CameraIntrinsics::default();
    let gt = tube_gt();
    let init = tube_init(&gt);
    let observed = render_depth(&mesh, &gt, &k);
    let s = RefineSettings::default();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| refine(&mesh, &observed, &k, &init, &s).unwrap())
    };
    let a = run(1);
    assert_eq!(a, run(3));
    assert_eq!(a, run(1));
}

#[test]
fn multi_start_is_seeded() {
    let mesh = tube();
    let k = CameraIntrinsics::default();
    let gt = tube_gt();
    let init = tube_init(&gt);
    let observed = render_depth(&mesh, &gt, &k);
    let s = settings("multi_start = 3\nseed = 5");
    let a = refine(&mesh, &observed, &k, &init, &s).unwrap();
    let b = refine(&mesh, &observed, &k, &init, &s).unwrap();
    assert_eq!(a, b);
    let single = refine(&mesh, &observed, &k, &init, &RefineSettings::default()).unwrap();
    assert!(a.evaluations > single.evaluations);
}

#[test]
fn easy_pairs_all_succeed() {
    let (mesh, cl) = make_phantom(&PhantomParams::default_for(PhantomKind::YBranch)).unwrap();
    let params = GenerateParams {
        perturbations_per_pose: 8,
        ..Default::default()
    };
    let pairs = generate_case("case_00", &mesh, &cl, &PerturbationSpec::BENCH, &params).unwrap();
    let easy: Vec<_> = pairs.into_iter().filter(|p| p.difficulty == Difficulty::Easy).take(10).collect();
    assert_eq!(easy.len(), 10);
    let report = batch_refine(&mesh, &params.intrinsics, &easy, &RefineSettings::default(), Observation::GroundTruth);
    let rows = report.rows();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.success));
    let mean = |f: &dyn Fn(&bronchonav::MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    assert!(mean(&|r| r.trans_err) < mean(&|r| r.init_trans_err));
    let easy_level = report.summary.level("easy").unwrap();
    assert_eq!((easy_level.pairs, easy_level.successes), (10, 10));
}
