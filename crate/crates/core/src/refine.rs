//! Pose refinement by minimizing depth-rendering disagreement plus a
//! wall-clearance penalty.
//!
//! Each inner iteration estimates the gradient of the objective by central
//! differences along the six tangent axes (twelve probe renders), takes a
//! normalized heavy-ball step `T <- T exp(dxi)` and keeps the best pose seen.
//! Each outer iteration restarts from the best pose with zero momentum and
//! recomputes the depth normalization.

use std::path::Path;

use nalgebra::{Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmark::BenchmarkPair;
use crate::camera::CameraIntrinsics;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::losses::{sdf_loss, RefineLossWeights, SdfLossParams};
use crate::mesh::{render_depth, sdf, AirwayMesh};
use crate::metrics::{summarize, MetricsRow, MetricsSummary};
use crate::se3::{rotation_xyz, Pose, TangentVector, REORTHONORMALIZE_EVERY};
use crate::ssim::msssim_masked;

/// Fewest valid observed pixels a refinement accepts.
pub const MIN_OBSERVED_PIXELS: usize = 100;

/// Consecutive non-improving steps before the step size is halved.
pub const HALVE_AFTER: usize = 3;

/// Extra starts are drawn uniformly within these per-axis bounds around init.
pub const MULTI_START_TRANS: f64 = 2.0;
pub const MULTI_START_ROT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefinerConfig {
    pub inner_iters: usize,
    pub outer_iters: usize,
    /// Translation step (mm).
    pub trans_step: f64,
    /// Rotation step (rad).
    pub rot_step: f64,
    /// Central-difference probe offsets (mm, rad).
    pub eps_trans: f64,
    pub eps_rot: f64,
    pub momentum: f64,
    pub multi_start: usize,
    /// An outer iteration improving the best loss by less than this stops the run.
    pub tol: f64,
    /// Seed for multi-start draws.
    pub seed: u64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            inner_iters: 3,
            outer_iters: 3,
            trans_step: 0.5,
            rot_step: 0.02,
            eps_trans: 0.05,
            eps_rot: 0.002,
            momentum: 0.9,
            multi_start: 1,
            tol: 1e-5,
            seed: 0,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.trans_step,
            self.rot_step,
            self.eps_trans,
            self.eps_rot,
            self.tol,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite()))
            || !(0.0..1.0).contains(&self.momentum)
            || self.inner_iters == 0
            || self.outer_iters == 0
            || self.multi_start == 0
        {
            return Err(Error::InvalidParams(format!("bad refiner config {self:?}")));
        }
        Ok(())
    }

    fn steps(&self) -> Vector6<f64> {
        let (t, r) = (self.trans_step, self.rot_step);
        Vector6::new(t, t, t, r, r, r)
    }

    fn eps(&self) -> Vector6<f64> {
        let (t, r) = (self.eps_trans, self.eps_rot);
        Vector6::new(t, t, t, r, r, r)
    }
}

/// Refiner configuration plus loss weights, loadable from `key = value` text.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RefineSettings {
    pub refiner: RefinerConfig,
    pub weights: RefineLossWeights,
    pub sdf: SdfLossParams,
}

impl RefineSettings {
    pub const KEYS: [&'static str; 17] = [
        "inner_iters",
        "outer_iters",
        "trans_step",
        "rot_step",
        "eps_trans",
        "eps_rot",
        "momentum",
        "multi_start",
        "tol",
        "seed",
        "lambda_r",
        "lambda_s",
        "w_in",
        "w_near",
        "w_out",
        "tau",
        "gamma",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: String| Error::InvalidParams(format!("{key} = {value:?}: {e}"));
        let f = || value.trim().parse::<f64>().map_err(|e| bad(e.to_string()));
        let u = || value.trim().parse::<usize>().map_err(|e| bad(e.to_string()));
        let c = &mut self.refiner;
        match key.trim() {
            "inner_iters" => c.inner_iters = u()?,
            "outer_iters" => c.outer_iters = u()?,
            "trans_step" => c.trans_step = f()?,
            "rot_step" => c.rot_step = f()?,
            "eps_trans" => c.eps_trans = f()?,
            "eps_rot" => c.eps_rot = f()?,
            "momentum" => c.momentum = f()?,
            "multi_start" => c.multi_start = u()?,
            "tol" => c.tol = f()?,
            "seed" => c.seed = value.trim().parse().map_err(|e: std::num::ParseIntError| bad(e.to_string()))?,
            "lambda_r" => self.weights.lambda_r = f()?,
            "lambda_s" => self.weights.lambda_s = f()?,
            "w_in" => self.sdf.w_in = f()?,
            "w_near" => self.sdf.w_near = f()?,
            "w_out" => self.sdf.w_out = f()?,
            "tau" => self.sdf.tau = f()?,
            "gamma" => self.sdf.gamma = f()?,
            other => return Err(Error::InvalidParams(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidParams(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut s = Self::default();
        s.apply_text(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.refiner.validate()?;
        self.sdf.validate()?;
        let w = &self.weights;
        if !(w.lambda_r >= 0.0 && w.lambda_s >= 0.0 && w.lambda_r.is_finite() && w.lambda_s.is_finite()) {
            return Err(Error::InvalidParams(format!("bad loss weights {w:?}")));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let c = &self.refiner;
        let values = [
            c.inner_iters.to_string(),
            c.outer_iters.to_string(),
            format!("{:?}", c.trans_step),
            format!("{:?}", c.rot_step),
            format!("{:?}", c.eps_trans),
            format!("{:?}", c.eps_rot),
            format!("{:?}", c.momentum),
            c.multi_start.to_string(),
            format!("{:?}", c.tol),
            c.seed.to_string(),
            format!("{:?}", self.weights.lambda_r),
            format!("{:?}", self.weights.lambda_s),
            format!("{:?}", self.sdf.w_in),
            format!("{:?}", self.sdf.w_near),
            format!("{:?}", self.sdf.w_out),
            format!("{:?}", self.sdf.tau),
            format!("{:?}", self.sdf.gamma),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// One visited pose. `iteration` 0 is the starting pose; rejected steps are not traced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub outer: usize,
    pub pose: Pose,
    pub render: f64,
    pub sdf: f64,
    pub total: f64,
    /// Lowest total seen so far under the current outer iteration's normalization.
    pub best_total: f64,
    pub sdf_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    pub final_pose: Pose,
    /// Total loss of `final_pose` under the last normalization.
    pub final_loss: f64,
    /// Total loss of the starting pose under the same normalization.
    pub init_loss: f64,
    pub loss_trace: Vec<TraceEntry>,
    pub converged: bool,
    /// Depth renders performed.
    pub evaluations: usize,
    pub rejected_steps: usize,
}

impl RefineResult {
    /// CSV with one line per trace entry.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from(
            "iteration,outer,render,sdf,total,best_total,sdf_value,r00,r01,r02,tx,r10,r11,r12,ty,r20,r21,r22,tz\n",
        );
        for e in &self.loss_trace {
            s.push_str(&format!(
                "{},{},{:?},{:?},{:?},{:?},{:?}",
                e.iteration, e.outer, e.render, e.sdf, e.total, e.best_total, e.sdf_value
            ));
            for v in e.pose.to_row_major() {
                s.push_str(&format!(",{v:?}"));
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Mode {
    Oracle,
    Pseudo,
}

/// The objective for one outer iteration: observed depths after scaling and
/// min-max normalization, ready to compare with renders.
struct Objective<'a> {
    mesh: &'a AirwayMesh,
    k: &'a CameraIntrinsics,
    weights: &'a RefineLossWeights,
    sdf_params: &'a SdfLossParams,
    target: Vec<f64>,
    target_valid: &'a [bool],
    /// Affine map applied to (scaled) depths: `(z - lo) * inv_range`.
    lo: f64,
    inv_range: f64,
}

#[derive(Debug, Clone)]
struct Eval {
    render: f64,
    sdf: f64,
    total: f64,
    sdf_value: f64,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

impl<'a> Objective<'a> {
    fn new(
        mesh: &'a AirwayMesh,
        k: &'a CameraIntrinsics,
        weights: &'a RefineLossWeights,
        sdf_params: &'a SdfLossParams,
        observed: &'a DepthMap,
        reference_render: &DepthMap,
        mode: Mode,
    ) -> Self {
        let joint: Vec<usize> = (0..observed.len())
            .filter(|&i| observed.valid_mask()[i] && reference_render.valid_mask()[i])
            .collect();
        // Fall back to the observation alone if the render sees nothing.
        let support: Vec<usize> = if joint.is_empty() {
            (0..observed.len()).filter(|&i| observed.valid_mask()[i]).collect()
        } else {
            joint
        };
        let scale = match mode {
            Mode::Oracle => 1.0,
            Mode::Pseudo => {
                let obs = median(support.iter().map(|&i| observed.values()[i] as f64).collect());
                let ren = median(
                    support
                        .iter()
                        .filter(|&&i| reference_render.valid_mask()[i])
                        .map(|&i| reference_render.values()[i] as f64)
                        .collect(),
                );
                match (obs, ren) {
                    (Some(o), Some(r)) if o > 0.0 && r > 0.0 => r / o,
                    _ => 1.0,
                }
            }
        };
        let target_raw: Vec<f64> = observed.values().iter().map(|&v| v as f64 * scale).collect();
        let (lo, hi) = support.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
            (lo.min(target_raw[i]), hi.max(target_raw[i]))
        });
        let range = hi - lo;
        let inv_range = if range > 1e-12 { 1.0 / range } else { 1.0 };
        let target = target_raw.iter().map(|v| (v - lo) * inv_range).collect();
        Self {
            mesh,
            k,
            weights,
            sdf_params,
            target,
            target_valid: observed.valid_mask(),
            lo,
            inv_range,
        }
    }

    fn score(&self, pose: &Pose, render: &DepthMap) -> Result<Eval> {
        let values: Vec<f64> = render
            .values()
            .iter()
            .map(|&v| (v as f64 - self.lo) * self.inv_range)
            .collect();
        let render_loss = match msssim_masked(
            &values,
            render.valid_mask(),
            &self.target,
            self.target_valid,
            render.width(),
            render.height(),
        ) {
            Ok(s) => 1.0 - s,
            // Too little overlap to compare: the worst possible score.
            Err(Error::TooSmall(_)) => 1.0,
            Err(e) => return Err(e),
        };
        let s = sdf(self.mesh, &pose.center())?.value;
        let sdf_term = sdf_loss(s, self.sdf_params);
        Ok(Eval {
            render: render_loss,
            sdf: sdf_term,
            total: self.weights.combine(render_loss, sdf_term),
            sdf_value: s,
        })
    }

    fn render(&self, pose: &Pose) -> DepthMap {
        render_depth(self.mesh, pose, self.k)
    }

    fn eval(&self, pose: &Pose) -> Result<(Eval, DepthMap)> {
        let d = self.render(pose);
        Ok((self.score(pose, &d)?, d))
    }

    /// Central-difference gradient of the total loss in tangent coordinates.
    fn gradient(&self, pose: &Pose, eps: &Vector6<f64>) -> Result<Vector6<f64>> {
        let probes: Vec<f64> = (0..12)
            .into_par_iter()
            .map(|j| {
                let axis = j / 2;
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                let mut v = Vector6::zeros();
                v[axis] = sign * eps[axis];
                let p = pose.retract(&TangentVector::from_vector6(&v));
                self.eval(&p).map(|(e, _)| e.total)
            })
            .collect::<Result<_>>()?;
        // Fixed reduction order keeps the result independent of scheduling.
        Ok(Vector6::from_fn(|axis, _| {
            (probes[2 * axis] - probes[2 * axis + 1]) / (2.0 * eps[axis])
        }))
    }
}

/// Central-difference estimate of the gradient of the total refinement loss
/// at `pose`, with `observed` as the target and normalization taken from the
/// render at `pose`.
#[allow(clippy::too_many_arguments)]
pub fn loss_gradient(
    mesh: &AirwayMesh,
    observed: &DepthMap,
    k: &CameraIntrinsics,
    pose: &Pose,
    eps_trans: f64,
    eps_rot: f64,
    w: &RefineLossWeights,
    sdf_p: &SdfLossParams,
) -> Result<Vector6<f64>> {
    let reference = render_depth(mesh, pose, k);
    let obj = Objective::new(mesh, k, w, sdf_p, observed, &reference, Mode::Oracle);
    let eps = Vector6::new(eps_trans, eps_trans, eps_trans, eps_rot, eps_rot, eps_rot);
    obj.gradient(pose, &eps)
}

fn check_inputs(
    observed: &DepthMap,
    k: &CameraIntrinsics,
    init: &Pose,
    settings: &RefineSettings,
) -> Result<()> {
    settings.validate()?;
    k.validate()?;
    if observed.width() != k.width || observed.height() != k.height {
        return Err(Error::SizeMismatch(format!(
            "observed depth is {}x{}, intrinsics are {}x{}",
            observed.width(),
            observed.height(),
            k.width,
            k.height
        )));
    }
    let n = observed.valid_count();
    if n < MIN_OBSERVED_PIXELS {
        return Err(Error::EmptyObservation(n));
    }
    if !init.is_finite() {
        return Err(Error::InvalidParams("initial pose is not finite".into()));
    }
    Ok(())
}

fn run_single(
    mesh: &AirwayMesh,
    observed: &DepthMap,
    k: &CameraIntrinsics,
    init: &Pose,
    settings: &RefineSettings,
    mode: Mode,
) -> Result<RefineResult> {
    let cfg = &settings.refiner;
    let steps = cfg.steps();
    let eps = cfg.eps();
    let mut evaluations = 0usize;
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut rejected_steps = 0usize;

    let init_render = render_depth(mesh, init, k);
    evaluations += 1;
    let init_inside = sdf(mesh, &init.center())?.value < 0.0;

    let mut best_pose = *init;
    let mut best_render = init_render.clone();
    let mut best_total = f64::NAN;
    let mut init_total = f64::NAN;
    let mut step_scale = 1.0;
    let mut non_improving = 0usize;
    let mut iteration = 0usize;
    let mut compositions = 0usize;
    let mut converged = false;

    let nonfinite = |iteration: usize, trace: &[TraceEntry]| Error::NonFiniteLoss {
        iteration,
        trace: trace.to_vec(),
    };

    for outer in 0..cfg.outer_iters {
        let obj = Objective::new(
            mesh,
            k,
            &settings.weights,
            &settings.sdf,
            observed,
            &best_render,
            mode,
        );
        // Re-score under this outer iteration's normalization; the starting
        // pose stays a candidate so the result never scores worse than it.
        let init_eval = obj.score(init, &init_render)?;
        init_total = init_eval.total;
        let mut best_eval = obj.score(&best_pose, &best_render)?;
        if init_eval.total < best_eval.total {
            best_pose = *init;
            best_render = init_render.clone();
            best_eval = init_eval.clone();
        }
        if !best_eval.total.is_finite() {
            return Err(nonfinite(iteration, &trace));
        }
        best_total = best_eval.total;
        if outer == 0 {
            trace.push(TraceEntry {
                iteration: 0,
                outer: 0,
                pose: *init,
                render: init_eval.render,
                sdf: init_eval.sdf,
                total: init_eval.total,
                best_total,
                sdf_value: init_eval.sdf_value,
            });
        }
        let outer_start = best_total;
        let mut current = best_pose;
        let mut velocity = Vector6::<f64>::zeros();

        for _ in 0..cfg.inner_iters {
            iteration += 1;
            let g = obj.gradient(&current, &eps)?;
            evaluations += 12;
            if !g.iter().all(|v| v.is_finite()) {
                return Err(nonfinite(iteration, &trace));
            }
            // Gradient with respect to step-normalized coordinates.
            let scaled = g.component_mul(&steps);
            let norm = scaled.norm();
            if norm == 0.0 {
                break;
            }
            velocity = velocity * cfg.momentum + scaled / norm;
            let delta = -(velocity.component_mul(&steps)) * step_scale;
            let mut candidate = current.retract(&TangentVector::from_vector6(&delta));
            compositions += 1;
            if compositions % REORTHONORMALIZE_EVERY == 0 {
                candidate = candidate.orthonormalized();
            }
            let (eval, render) = obj.eval(&candidate)?;
            evaluations += 1;
            if !eval.total.is_finite() {
                return Err(nonfinite(iteration, &trace));
            }
            if init_inside && eval.sdf_value >= 0.0 {
                // Never leave the lumen: drop the step and the momentum behind it.
                rejected_steps += 1;
                velocity = Vector6::zeros();
                non_improving += 1;
            } else {
                current = candidate;
                if eval.total < best_total {
                    best_total = eval.total;
                    best_pose = candidate;
                    best_render = render;
                    non_improving = 0;
                } else {
                    non_improving += 1;
                }
                trace.push(TraceEntry {
                    iteration,
                    outer,
                    pose: candidate,
                    render: eval.render,
                    sdf: eval.sdf,
                    total: eval.total,
                    best_total,
                    sdf_value: eval.sdf_value,
                });
            }
            if non_improving >= HALVE_AFTER {
                step_scale *= 0.5;
                non_improving = 0;
            }
        }
        if outer_start - best_total < cfg.tol {
            converged = true;
            break;
        }
    }

    Ok(RefineResult {
        final_pose: best_pose,
        final_loss: best_total,
        init_loss: init_total,
        loss_trace: trace,
        converged,
        evaluations,
        rejected_steps,
    })
}

fn refine_mode(
    mesh: &AirwayMesh,
    observed: &DepthMap,
    k: &CameraIntrinsics,
    init: &Pose,
    settings: &RefineSettings,
    mode: Mode,
) -> Result<RefineResult> {
    check_inputs(observed, k, init, settings)?;
    let cfg = &settings.refiner;
    let mut starts = vec![*init];
    if cfg.multi_start > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 1..cfg.multi_start {
            let t = Vector3::from_fn(|_, _| rng.gen_range(-MULTI_START_TRANS..=MULTI_START_TRANS));
            let a = Vector3::from_fn(|_, _| rng.gen_range(-MULTI_START_ROT..=MULTI_START_ROT));
            starts.push(init.compose(&Pose::new(rotation_xyz(&a), t)));
        }
    }
    let mut best: Option<RefineResult> = None;
    let mut total_evals = 0;
    for start in &starts {
        let r = run_single(mesh, observed, k, start, settings, mode)?;
        total_evals += r.evaluations;
        if best.as_ref().map_or(true, |b| r.final_loss < b.final_loss) {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one start");
    best.evaluations = total_evals;
    Ok(best)
}

/// Refines `init` so that the rendered depth matches `observed`.
pub fn refine(
    mesh: &AirwayMesh,
    observed: &DepthMap,
    k: &CameraIntrinsics,
    init: &Pose,
    settings: &RefineSettings,
) -> Result<RefineResult> {
    refine_mode(mesh, observed, k, init, settings, Mode::Oracle)
}

/// Like [`refine`] for a depth map of unknown scale: at the start of every
/// outer iteration the map is rescaled so its median matches the render at
/// the current best pose.
pub fn refine_with_pseudo_depth(
    mesh: &AirwayMesh,
    pseudo: &DepthMap,
    k: &CameraIntrinsics,
    init: &Pose,
    settings: &RefineSettings,
) -> Result<RefineResult> {
    refine_mode(mesh, pseudo, k, init, settings, Mode::Pseudo)
}

/// What the refiner is asked to match for each pair.
#[derive(Clone, Copy)]
pub enum Observation<'a> {
    /// The stored ground-truth render.
    GroundTruth,
    /// A scale-ambiguous map derived from the pair, refined in pseudo-depth mode.
    Pseudo(&'a (dyn Fn(&BenchmarkPair) -> DepthMap + Sync)),
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub result: RefineResult,
    pub row: MetricsRow,
}

#[derive(Debug, Default)]
pub struct BatchReport {
    /// One entry per input pair, in input order.
    pub outcomes: Vec<std::result::Result<PairOutcome, String>>,
    pub summary: MetricsSummary,
}

impl BatchReport {
    pub fn rows(&self) -> Vec<MetricsRow> {
        self.outcomes
            .iter()
            .filter_map(|o| o.as_ref().ok().map(|p| p.row.clone()))
            .collect()
    }
}

/// Refines and scores one pair.
pub fn refine_pair(
    mesh: &AirwayMesh,
    k: &CameraIntrinsics,
    pair: &BenchmarkPair,
    settings: &RefineSettings,
    observation: Observation<'_>,
) -> Result<PairOutcome> {
    let result = match observation {
        Observation::GroundTruth => refine(mesh, &pair.depth, k, &pair.init_pose, settings)?,
        Observation::Pseudo(f) => {
            refine_with_pseudo_depth(mesh, &f(pair), k, &pair.init_pose, settings)?
        }
    };
    let final_depth = render_depth(mesh, &result.final_pose, k);
    let row = MetricsRow::evaluate(
        &pair.case_id,
        pair.frame_id,
        pair.difficulty,
        mesh,
        k,
        &result.final_pose,
        &final_depth,
        &pair.gt_pose,
        &pair.depth,
        &pair.init_pose,
        result.evaluations + 1,
    )?;
    Ok(PairOutcome { result, row })
}

/// Refines every pair independently (in parallel) and aggregates metrics.
/// A failing pair is recorded and the batch continues.
pub fn batch_refine(
    mesh: &AirwayMesh,
    k: &CameraIntrinsics,
    pairs: &[BenchmarkPair],
    settings: &RefineSettings,
    observation: Observation<'_>,
) -> BatchReport {
    let outcomes: Vec<std::result::Result<PairOutcome, String>> = pairs
        .par_iter()
        .map(|p| refine_pair(mesh, k, p, settings, observation).map_err(|e| e.to_string()))
        .collect();
    let rows: Vec<MetricsRow> = outcomes
        .iter()
        .filter_map(|o| o.as_ref().ok().map(|p| p.row.clone()))
        .collect();
    BatchReport {
        summary: summarize(&rows),
        outcomes,
    }
}
