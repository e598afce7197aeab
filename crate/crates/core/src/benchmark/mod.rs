//! Synthetic registration benchmark: ground-truth poses along centerlines,
//! perturbed initial poses, co-visibility filtering and difficulty labels.

mod dataset;
pub mod phantom;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::depth::{warp_depth, DepthMap};
use crate::error::{Error, Result};
use crate::losses::{pose_loss, Difficulty, PoseLossWeights};
use crate::mesh::{render_depth, sample_centerline_poses, sdf, AirwayMesh, Centerline};
use crate::se3::{rotation_xyz, Pose};

pub use dataset::{
    read_case, read_dataset, write_dataset, CaseMeta, CaseSummary, DatasetManifest, DifficultyCounts, PairMeta,
    PerturbationMeta,
};
pub use phantom::{make_phantom, PhantomKind, PhantomParams};

/// Recorded in metadata: how a perturbation is built from its draws.
pub const PERTURBATION_CONVENTION: &str =
    "camera-frame right multiplication; per-axis uniform translation; rotation Rx*Ry*Rz of per-axis uniform angles";

/// Uniform per-axis perturbation bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Per-axis translation bound (mm).
    pub max_trans: f64,
    /// Per-axis rotation bound (rad).
    pub max_rot: f64,
}

impl PerturbationSpec {
    pub const TRAIN: PerturbationSpec = PerturbationSpec {
        max_trans: 10.0,
        max_rot: 0.44,
    };
    /// 5 mm and 25 degrees per axis.
    pub const BENCH: PerturbationSpec = PerturbationSpec {
        max_trans: 5.0,
        max_rot: 0.4363,
    };
    pub const ZERO: PerturbationSpec = PerturbationSpec {
        max_trans: 0.0,
        max_rot: 0.0,
    };

    pub fn preset(name: &str) -> Result<PerturbationSpec> {
        match name {
            "train" => Ok(Self::TRAIN),
            "bench" => Ok(Self::BENCH),
            "zero" | "none" => Ok(Self::ZERO),
            other => Err(Error::InvalidParams(format!("unknown preset {other:?}"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_trans >= 0.0 && self.max_rot >= 0.0 && self.max_trans.is_finite() && self.max_rot < std::f64::consts::PI {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!("bad perturbation bounds {self:?}")))
        }
    }

    fn uniform(rng: &mut ChaCha8Rng, bound: f64) -> f64 {
        if bound > 0.0 {
            rng.gen_range(-bound..=bound)
        } else {
            0.0
        }
    }

    /// Draws the per-axis translation (mm) and rotation angles (rad).
    pub fn draw(&self, rng: &mut ChaCha8Rng) -> (Vector3<f64>, Vector3<f64>) {
        let t = Vector3::from_fn(|_, _| Self::uniform(rng, self.max_trans));
        let a = Vector3::from_fn(|_, _| Self::uniform(rng, self.max_rot));
        (t, a)
    }

    /// Camera-frame offset built from a draw.
    pub fn offset(t: &Vector3<f64>, angles: &Vector3<f64>) -> Pose {
        Pose::new(rotation_xyz(angles), *t)
    }
}

/// One registration problem.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkPair {
    pub case_id: String,
    pub frame_id: usize,
    pub gt_pose: Pose,
    pub init_pose: Pose,
    /// Render from `gt_pose`.
    pub depth: DepthMap,
    /// Render from `init_pose`.
    pub init_depth: DepthMap,
    pub difficulty: Difficulty,
    pub pose_loss_value: f64,
    /// Fraction of GT pixels that land in the initial view.
    pub overlap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerateParams {
    /// Arc-length spacing of ground-truth poses (mm).
    pub spacing: f64,
    pub seed: u64,
    /// Perturbations drawn per ground-truth pose (each kept or rejected).
    pub perturbations_per_pose: usize,
    /// Minimum co-visible fraction of the GT view.
    pub min_overlap: f64,
    pub intrinsics: CameraIntrinsics,
    pub pose_loss_weights: PoseLossWeights,
}

impl Default for GenerateParams {
    fn default() -> Self {
        Self {
            spacing: 5.0,
            seed: 42,
            perturbations_per_pose: 1,
            min_overlap: 0.3,
            intrinsics: CameraIntrinsics::default(),
            pose_loss_weights: PoseLossWeights::default(),
        }
    }
}

/// A generated case: the mesh, how it was sampled and the kept pairs.
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub case_id: String,
    pub mesh: AirwayMesh,
    pub spec: PerturbationSpec,
    pub params: GenerateParams,
    pub pairs: Vec<BenchmarkPair>,
}

impl BenchmarkCase {
    pub fn generate(
        case_id: &str,
        mesh: AirwayMesh,
        cl: &Centerline,
        spec: &PerturbationSpec,
        params: &GenerateParams,
    ) -> Result<Self> {
        let pairs = generate_case(case_id, &mesh, cl, spec, params)?;
        Ok(Self {
            case_id: case_id.to_string(),
            mesh,
            spec: *spec,
            params: *params,
            pairs,
        })
    }

    pub fn counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for p in &self.pairs {
            c[p.difficulty as usize] += 1;
        }
        c
    }
}

/// Why a candidate pair was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    GtOutsideLumen,
    InitOutsideLumen,
    LowOverlap,
    LossTooHigh,
}

/// Candidate built from one draw, before filtering.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub gt_pose: Pose,
    pub init_pose: Pose,
    pub translation: Vector3<f64>,
    pub angles: Vector3<f64>,
}

/// The random stream for ground-truth pose `index`: independent of every
/// other pose, so parallel generation gives the same draws.
pub fn pose_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// All perturbation draws for the given ground-truth poses, in order.
pub fn draw_candidates(gt: &[Pose], spec: &PerturbationSpec, seed: u64, per_pose: usize) -> Vec<Candidate> {
    gt.iter()
        .enumerate()
        .flat_map(|(i, g)| {
            let mut rng = pose_rng(seed, i);
            (0..per_pose)
                .map(|_| {
                    let (t, a) = spec.draw(&mut rng);
                    Candidate {
                        gt_pose: *g,
                        init_pose: g.compose(&PerturbationSpec::offset(&t, &a)),
                        translation: t,
                        angles: a,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect()
}

struct Accepted {
    gt_pose: Pose,
    init_pose: Pose,
    depth: DepthMap,
    init_depth: DepthMap,
    difficulty: Difficulty,
    loss: f64,
    overlap: f64,
}

fn evaluate_candidate(
    mesh: &AirwayMesh,
    c: &Candidate,
    params: &GenerateParams,
) -> Result<std::result::Result<Accepted, Rejection>> {
    if sdf(mesh, &c.gt_pose.center())?.value >= 0.0 {
        return Ok(Err(Rejection::GtOutsideLumen));
    }
    if sdf(mesh, &c.init_pose.center())?.value >= 0.0 {
        return Ok(Err(Rejection::InitOutsideLumen));
    }
    let loss = pose_loss(&c.init_pose, &c.gt_pose, &params.pose_loss_weights).total;
    let Some(difficulty) = Difficulty::from_loss(loss) else {
        return Ok(Err(Rejection::LossTooHigh));
    };
    let k = &params.intrinsics;
    let depth = render_depth(mesh, &c.gt_pose, k);
    let relative = c.init_pose.inverse().compose(&c.gt_pose);
    let overlap = match warp_depth(&depth, &relative, k) {
        Ok(w) => w.overlap_fraction,
        Err(Error::EmptyDepth) => 0.0,
        Err(e) => return Err(e),
    };
    if overlap < params.min_overlap {
        return Ok(Err(Rejection::LowOverlap));
    }
    let init_depth = render_depth(mesh, &c.init_pose, k);
    Ok(Ok(Accepted {
        gt_pose: c.gt_pose,
        init_pose: c.init_pose,
        depth,
        init_depth,
        difficulty,
        loss,
        overlap,
    }))
}

/// Samples ground-truth poses every `params.spacing` mm along `cl`, perturbs
/// each `params.perturbations_per_pose` times and keeps the pairs whose
/// cameras are both inside the lumen, whose views overlap enough and whose
/// pose loss is in range.
pub fn generate_case(
    case_id: &str,
    mesh: &AirwayMesh,
    cl: &Centerline,
    spec: &PerturbationSpec,
    params: &GenerateParams,
) -> Result<Vec<BenchmarkPair>> {
    spec.validate()?;
    params.intrinsics.validate()?;
    if params.perturbations_per_pose == 0 {
        return Err(Error::InvalidParams("perturbations_per_pose must be >= 1".into()));
    }
    let gt = sample_centerline_poses(cl, params.spacing)?;
    let candidates = draw_candidates(&gt, spec, params.seed, params.perturbations_per_pose);
    let accepted: Vec<std::result::Result<Accepted, Rejection>> = candidates
        .par_iter()
        .map(|c| evaluate_candidate(mesh, c, params))
        .collect::<Result<_>>()?;
    let pairs: Vec<BenchmarkPair> = accepted
        .into_iter()
        .filter_map(|a| a.ok())
        .enumerate()
        .map(|(frame_id, a)| BenchmarkPair {
            case_id: case_id.to_string(),
            frame_id,
            gt_pose: a.gt_pose,
            init_pose: a.init_pose,
            depth: a.depth,
            init_depth: a.init_depth,
            difficulty: a.difficulty,
            pose_loss_value: a.loss,
            overlap: a.overlap,
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoValidPairs);
    }
    Ok(pairs)
}

/// A stand-in for a monocular depth estimate: `depth` times `scale`, each
/// valid pixel multiplied by `1 + n` with `n ~ N(0, noise^2)` (factors are
/// floored at 1e-3 so depths stay positive).
pub fn pseudo_depth(depth: &DepthMap, scale: f32, noise: f32, seed: u64) -> Result<DepthMap> {
    if !(scale > 0.0 && scale.is_finite() && noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidParams(format!("pseudo depth scale {scale}, noise {noise}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, noise).expect("finite non-negative std");
    // One draw per pixel, valid or not, so the noise field depends only on the seed.
    let factors: Vec<f32> = (0..depth.len())
        .map(|_| (1.0 + normal.sample(&mut rng)).max(1e-3))
        .collect();
    Ok(depth.map_valid(|i, v| v * scale * factors[i]))
}
