use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use bronchonav::benchmark::phantom::{make_phantom, PhantomKind, PhantomParams};
use bronchonav::benchmark::{read_dataset, write_dataset, BenchmarkCase};
use bronchonav::errormap::write_error_map;
use bronchonav::io::{format_pose_line, write_atomic};
use bronchonav::metrics::{read_metrics_csv, summarize, write_metrics_csv, MetricsRow};
use bronchonav::refine::{refine_pair, Observation, PairOutcome};
use bronchonav::{
    pseudo_depth, AirwayMesh, BenchmarkPair, CameraIntrinsics, Centerline, DepthMap, GenerateParams, Pose,
    PerturbationSpec, RefineSettings,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::{EvaluateArgs, ErrormapArgs, GenerateArgs, PhantomArgs, RefineArgs, ReportArgs};

const DEFAULT_SEED: u64 = 42;

pub struct Global {
    pub seed: Option<u64>,
    pub config: Option<PathBuf>,
}

fn mkdir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn require_exists(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Input(format!("{} does not exist", path.display())))
    }
}

fn frame_name(frame: usize, ext: &str) -> String {
    format!("{frame:06}.{ext}")
}

pub fn generate(global: &Global, a: &GenerateArgs) -> Result<(), CliError> {
    let spec = PerturbationSpec::preset(&a.preset)?;
    let intrinsics = match &a.intrinsics {
        Some(p) => {
            require_exists(p)?;
            CameraIntrinsics::load_json(p)?
        }
        None => CameraIntrinsics::default(),
    };
    let params = GenerateParams {
        spacing: a.spacing,
        seed: global.seed.unwrap_or(DEFAULT_SEED),
        perturbations_per_pose: a.per_pose,
        min_overlap: a.min_overlap,
        intrinsics,
        ..GenerateParams::default()
    };
    let (mesh, cl) = match (&a.phantom, &a.mesh, &a.centerline) {
        (Some(kind), _, _) => make_phantom(&PhantomParams::default_for(kind.parse::<PhantomKind>()?))?,
        (None, Some(m), Some(c)) => {
            require_exists(m)?;
            require_exists(c)?;
            (AirwayMesh::load(m)?, Centerline::load_json(c)?)
        }
        _ => return Err(CliError::Input("give --phantom, or --mesh with --centerline".into())),
    };
    let mut case = BenchmarkCase::generate(&a.case_id, mesh, &cl, &spec, &params)?;
    if let Some(n) = a.max_pairs {
        case.pairs.truncate(n);
    }
    let manifest = write_dataset(&a.out, std::slice::from_ref(&case))?;
    let [easy, medium, hard] = case.counts();
    println!(
        "{}: {} pairs (easy {easy}, medium {medium}, hard {hard}) written to {}",
        case.case_id,
        manifest.total_pairs,
        a.out.display()
    );
    Ok(())
}

fn load_settings(global: &Global, overrides: &[String]) -> Result<RefineSettings, CliError> {
    let mut s = match &global.config {
        Some(p) => {
            require_exists(p)?;
            RefineSettings::load(p)?
        }
        None => RefineSettings::default(),
    };
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set {o:?}: expected KEY=VALUE")))?;
        s.set(k, v)?;
    }
    if let Some(seed) = global.seed {
        s.refiner.seed = seed;
    }
    s.validate()?;
    Ok(s)
}

/// What a finished pair leaves on disk; reruns reuse it instead of refining again.
#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    final_pose: [f64; 12],
    row: MetricsRow,
}

enum Target {
    GroundTruth,
    Files(HashMap<(String, usize), DepthMap>),
    Synthetic { scale: f32, noise: f32, seed: u64 },
}

impl Target {
    fn describe(&self) -> String {
        match self {
            Target::GroundTruth => "ground_truth".into(),
            Target::Files(_) => "pseudo_files".into(),
            Target::Synthetic { scale, noise, seed } => {
                format!("pseudo_synthetic scale={scale:?} noise={noise:?} seed={seed}")
            }
        }
    }
}

fn load_pseudo_dir(dir: &Path, cases: &[BenchmarkCase]) -> Result<HashMap<(String, usize), DepthMap>, CliError> {
    let mut maps = HashMap::new();
    for c in cases {
        for p in &c.pairs {
            let path = dir.join(&c.case_id).join(frame_name(p.frame_id, "pfm"));
            require_exists(&path)?;
            maps.insert((c.case_id.clone(), p.frame_id), DepthMap::read_pfm(&path)?);
        }
    }
    Ok(maps)
}

fn refine_one(
    case: &BenchmarkCase,
    pair: &BenchmarkPair,
    settings: &RefineSettings,
    target: &Target,
) -> bronchonav::Result<PairOutcome> {
    let k = &case.params.intrinsics;
    match target {
        Target::GroundTruth => refine_pair(&case.mesh, k, pair, settings, Observation::GroundTruth),
        Target::Files(maps) => {
            let lookup = |p: &BenchmarkPair| maps[&(p.case_id.clone(), p.frame_id)].clone();
            refine_pair(&case.mesh, k, pair, settings, Observation::Pseudo(&lookup))
        }
        Target::Synthetic { scale, noise, seed } => {
            let obs = pseudo_depth(&pair.depth, *scale, *noise, seed.wrapping_add(pair.frame_id as u64))?;
            let fixed = |_: &BenchmarkPair| obs.clone();
            refine_pair(&case.mesh, k, pair, settings, Observation::Pseudo(&fixed))
        }
    }
}

fn read_record(path: &Path) -> Result<Option<PairRecord>, CliError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::Runtime(format!("{}: {e}", path.display()))),
    }
}

fn write_record(dir: &Path, frame: usize, outcome: &PairOutcome) -> bronchonav::Result<()> {
    write_atomic(
        &dir.join("traces").join(frame_name(frame, "csv")),
        outcome.result.trace_csv().as_bytes(),
    )?;
    let record = PairRecord {
        final_pose: outcome.result.final_pose.to_row_major(),
        row: outcome.row.clone(),
    };
    let mut json = serde_json::to_string_pretty(&record).expect("serializable record");
    json.push('\n');
    write_atomic(&dir.join("results").join(frame_name(frame, "json")), json.as_bytes())
}

pub fn refine(global: &Global, a: &RefineArgs) -> Result<(), CliError> {
    let settings = load_settings(global, &a.overrides)?;
    require_exists(&a.dataset)?;
    let cases = read_dataset(&a.dataset)?;
    let total: usize = cases.iter().map(|c| c.pairs.len()).sum();
    if total == 0 {
        return Err(CliError::Input(format!("{} has no pairs", a.dataset.display())));
    }
    let target = match (&a.pseudo_dir, a.pseudo_scale) {
        (Some(dir), _) => {
            require_exists(dir)?;
            Target::Files(load_pseudo_dir(dir, &cases)?)
        }
        (None, Some(scale)) => Target::Synthetic {
            scale,
            noise: a.pseudo_noise,
            seed: global.seed.unwrap_or(DEFAULT_SEED),
        },
        (None, None) => Target::GroundTruth,
    };

    // A rerun may only resume a run made with identical settings.
    mkdir(&a.out)?;
    let stamp = format!("# observation: {}\n{}", target.describe(), settings.to_text());
    let stamp_path = a.out.join("settings.txt");
    match std::fs::read_to_string(&stamp_path) {
        Ok(old) if old != stamp => {
            return Err(CliError::Input(format!(
                "{} holds a run with different settings; use a fresh output directory",
                a.out.display()
            )))
        }
        Ok(_) => {}
        Err(_) => write_atomic(&stamp_path, stamp.as_bytes())?,
    }

    let mut rows = Vec::new();
    let mut failures = String::new();
    for case in &cases {
        let dir = a.out.join(&case.case_id);
        mkdir(&dir.join("results"))?;
        mkdir(&dir.join("traces"))?;
        let done: Vec<Option<PairRecord>> = case
            .pairs
            .iter()
            .map(|p| read_record(&dir.join("results").join(frame_name(p.frame_id, "json"))))
            .collect::<Result<_, _>>()?;
        let pending: Vec<&BenchmarkPair> = case
            .pairs
            .iter()
            .zip(&done)
            .filter(|(_, d)| d.is_none())
            .map(|(p, _)| p)
            .collect();
        if pending.len() < case.pairs.len() {
            println!(
                "{}: resuming, {} of {} pairs already refined",
                case.case_id,
                case.pairs.len() - pending.len(),
                case.pairs.len()
            );
        }
        let mut fresh: HashMap<usize, Result<PairRecord, String>> = pending
            .par_iter()
            .map(|p| {
                let r = refine_one(case, p, &settings, &target).and_then(|o| {
                    write_record(&dir, p.frame_id, &o)?;
                    Ok(PairRecord {
                        final_pose: o.result.final_pose.to_row_major(),
                        row: o.row,
                    })
                });
                (p.frame_id, r.map_err(|e| e.to_string()))
            })
            .collect();

        let mut poses = String::new();
        for (p, d) in case.pairs.iter().zip(done) {
            let record = match d {
                Some(r) => Ok(r),
                None => fresh.remove(&p.frame_id).expect("every pending pair was refined"),
            };
            match record {
                Ok(r) => {
                    poses.push_str(&format_pose_line(&Pose::from_row_major(&r.final_pose)));
                    rows.push(r.row);
                }
                Err(e) => {
                    // Failed pairs keep their initial pose.
                    poses.push_str(&format_pose_line(&p.init_pose));
                    writeln!(failures, "{} {} {e}", case.case_id, p.frame_id).expect("string write");
                }
            }
            poses.push('\n');
        }
        write_atomic(&dir.join("refined_poses.txt"), poses.as_bytes())?;
    }

    write_metrics_csv(&a.out.join("metrics.csv"), &rows)?;
    let failures_path = a.out.join("failures.txt");
    if failures.is_empty() {
        let _ = std::fs::remove_file(&failures_path);
    } else {
        write_atomic(&failures_path, failures.as_bytes())?;
        eprint!("{failures}");
    }
    print!("{}", summarize(&rows).to_table());
    if rows.is_empty() {
        return Err(CliError::Runtime(format!("all {total} pairs failed")));
    }
    Ok(())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    require_exists(&a.dataset)?;
    let cases = read_dataset(&a.dataset)?;
    let mut rows = Vec::new();
    for case in &cases {
        let scored: Vec<MetricsRow> = case
            .pairs
            .par_iter()
            .map(|p| {
                MetricsRow::evaluate(
                    &p.case_id,
                    p.frame_id,
                    p.difficulty,
                    &case.mesh,
                    &case.params.intrinsics,
                    &p.init_pose,
                    &p.init_depth,
                    &p.gt_pose,
                    &p.depth,
                    &p.init_pose,
                    0,
                )
            })
            .collect::<bronchonav::Result<_>>()?;
        rows.extend(scored);
    }
    mkdir(&a.out)?;
    write_metrics_csv(&a.out.join("metrics.csv"), &rows)?;
    print!("{}", summarize(&rows).to_table());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    require_exists(&a.metrics)?;
    let rows = read_metrics_csv(&a.metrics)?;
    let summary = summarize(&rows);
    let json_path = a.json.clone().unwrap_or_else(|| {
        a.metrics
            .parent()
            .map(|d| d.join("summary.json"))
            .unwrap_or_else(|| PathBuf::from("summary.json"))
    });
    let mut json = serde_json::to_string_pretty(&summary).expect("serializable summary");
    json.push('\n');
    write_atomic(&json_path, json.as_bytes())?;
    print!("{}", summary.to_table());
    Ok(())
}

pub fn errormap(a: &ErrormapArgs) -> Result<(), CliError> {
    require_exists(&a.pred)?;
    require_exists(&a.reference)?;
    let pred = DepthMap::read_pfm(&a.pred)?;
    let reference = DepthMap::read_pfm(&a.reference)?;
    write_error_map(&pred, &reference, &a.out)?;
    Ok(())
}

pub fn phantom(a: &PhantomArgs) -> Result<(), CliError> {
    let (mesh, cl) = make_phantom(&PhantomParams::default_for(a.kind.parse::<PhantomKind>()?))?;
    mkdir(&a.out)?;
    mesh.save(&a.out.join("mesh.obj"))?;
    cl.save_json(&a.out.join("centerline.json"))?;
    println!(
        "{} phantom: {} vertices, {} triangles",
        a.kind,
        mesh.vertices().len(),
        mesh.triangles().len()
    );
    Ok(())
}
