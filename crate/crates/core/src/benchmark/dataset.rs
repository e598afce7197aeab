//! On-disk benchmark layout.
//!
//! ```text
//! root/
//!   manifest.json
//!   case_00/
//!     mesh.obj
//!     meta.json
//!     poses.txt          ground-truth pose of frame k on line k
//!     init_poses.txt     perturbed pose of frame k on line k
//!     depths/000000.pfm  render from the ground-truth pose
//!     init_depths/000000.pfm
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BenchmarkCase, BenchmarkPair, GenerateParams, PerturbationSpec, PERTURBATION_CONVENTION};
use crate::camera::CameraIntrinsics;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::io::{read_poses, write_atomic, write_poses};
use crate::losses::{Difficulty, PoseLossWeights};
use crate::mesh::AirwayMesh;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationMeta {
    pub max_trans_mm: f64,
    pub max_rot_rad: f64,
    pub convention: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DifficultyCounts {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

impl DifficultyCounts {
    fn of(pairs: &[BenchmarkPair]) -> Self {
        let mut c = Self::default();
        for p in pairs {
            match p.difficulty {
                Difficulty::Easy => c.easy += 1,
                Difficulty::Medium => c.medium += 1,
                Difficulty::Hard => c.hard += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.easy + self.medium + self.hard
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub frame_id: usize,
    pub difficulty: Difficulty,
    pub pose_loss: f64,
    pub overlap: f64,
}

/// Contents of `meta.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_id: String,
    pub seed: u64,
    pub spacing_mm: f64,
    pub perturbation: PerturbationMeta,
    pub perturbations_per_pose: usize,
    pub min_overlap: f64,
    pub counts: DifficultyCounts,
    pub pose_loss_weights: PoseLossWeights,
    pub intrinsics: CameraIntrinsics,
    pub pairs: Vec<PairMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub pairs: usize,
    pub counts: DifficultyCounts,
}

/// Contents of the root `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub total_pairs: usize,
    pub cases: Vec<CaseSummary>,
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable metadata");
    s.push('\n');
    s.into_bytes()
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn frame_file(frame: usize) -> String {
    format!("{frame:06}.pfm")
}

fn write_case(root: &Path, case: &BenchmarkCase) -> Result<CaseSummary> {
    let dir = root.join(&case.case_id);
    mkdir(&dir.join("depths"))?;
    mkdir(&dir.join("init_depths"))?;
    case.mesh.save(&dir.join("mesh.obj"))?;
    for (k, p) in case.pairs.iter().enumerate() {
        if p.frame_id != k {
            return Err(Error::InvalidParams(format!(
                "{}: pair {k} has frame id {}",
                case.case_id, p.frame_id
            )));
        }
        p.depth.write_pfm(&dir.join("depths").join(frame_file(k)))?;
        p.init_depth.write_pfm(&dir.join("init_depths").join(frame_file(k)))?;
    }
    let gt: Vec<_> = case.pairs.iter().map(|p| p.gt_pose).collect();
    let init: Vec<_> = case.pairs.iter().map(|p| p.init_pose).collect();
    write_poses(&dir.join("poses.txt"), &gt)?;
    write_poses(&dir.join("init_poses.txt"), &init)?;
    let counts = DifficultyCounts::of(&case.pairs);
    let meta = CaseMeta {
        case_id: case.case_id.clone(),
        seed: case.params.seed,
        spacing_mm: case.params.spacing,
        perturbation: PerturbationMeta {
            max_trans_mm: case.spec.max_trans,
            max_rot_rad: case.spec.max_rot,
            convention: PERTURBATION_CONVENTION.to_string(),
        },
        perturbations_per_pose: case.params.perturbations_per_pose,
        min_overlap: case.params.min_overlap,
        counts,
        pose_loss_weights: case.params.pose_loss_weights,
        intrinsics: case.params.intrinsics,
        pairs: case
            .pairs
            .iter()
            .map(|p| PairMeta {
                frame_id: p.frame_id,
                difficulty: p.difficulty,
                pose_loss: p.pose_loss_value,
                overlap: p.overlap,
            })
            .collect(),
    };
    write_atomic(&dir.join("meta.json"), &to_json(&meta))?;
    Ok(CaseSummary {
        case_id: case.case_id.clone(),
        pairs: case.pairs.len(),
        counts,
    })
}

/// Writes every case and the root manifest.
pub fn write_dataset(root: &Path, cases: &[BenchmarkCase]) -> Result<DatasetManifest> {
    mkdir(root)?;
    let summaries = cases
        .iter()
        .map(|c| write_case(root, c))
        .collect::<Result<Vec<_>>>()?;
    let manifest = DatasetManifest {
        total_pairs: summaries.iter().map(|s| s.pairs).sum(),
        cases: summaries,
    };
    write_atomic(&root.join("manifest.json"), &to_json(&manifest))?;
    Ok(manifest)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::ManifestMismatch(format!("missing {}", path.display())),
        _ => Error::io(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::ManifestMismatch(format!("missing {}", path.display())))
    }
}

/// Reads one case directory.
pub fn read_case(dir: &Path) -> Result<BenchmarkCase> {
    let meta: CaseMeta = read_json(&dir.join("meta.json"))?;
    for f in ["poses.txt", "init_poses.txt", "mesh.obj"] {
        require(&dir.join(f))?;
    }
    let gt = read_poses(&dir.join("poses.txt"))?;
    let init = read_poses(&dir.join("init_poses.txt"))?;
    let n = meta.pairs.len();
    if gt.len() != n || init.len() != n || meta.counts.total() != n {
        return Err(Error::ManifestMismatch(format!(
            "{}: meta lists {n} pairs, poses.txt has {}, init_poses.txt has {}, counts sum to {}",
            dir.display(),
            gt.len(),
            init.len(),
            meta.counts.total()
        )));
    }
    let mesh = AirwayMesh::load(&dir.join("mesh.obj"))?;
    let k = meta.intrinsics;
    let mut pairs = Vec::with_capacity(n);
    for (i, pm) in meta.pairs.iter().enumerate() {
        if pm.frame_id != i {
            return Err(Error::ManifestMismatch(format!(
                "{}: pair {i} has frame id {}",
                dir.display(),
                pm.frame_id
            )));
        }
        if Difficulty::from_loss(pm.pose_loss) != Some(pm.difficulty) {
            return Err(Error::ManifestMismatch(format!(
                "{}: frame {i} labelled {} but its loss {} says otherwise",
                dir.display(),
                pm.difficulty,
                pm.pose_loss
            )));
        }
        let load = |sub: &str| -> Result<DepthMap> {
            let path = dir.join(sub).join(frame_file(i));
            require(&path)?;
            let d = DepthMap::read_pfm(&path)?;
            if d.width() != k.width || d.height() != k.height {
                return Err(Error::ManifestMismatch(format!(
                    "{} is {}x{}, intrinsics say {}x{}",
                    path.display(),
                    d.width(),
                    d.height(),
                    k.width,
                    k.height
                )));
            }
            Ok(d)
        };
        pairs.push(BenchmarkPair {
            case_id: meta.case_id.clone(),
            frame_id: i,
            gt_pose: gt[i],
            init_pose: init[i],
            depth: load("depths")?,
            init_depth: load("init_depths")?,
            difficulty: pm.difficulty,
            pose_loss_value: pm.pose_loss,
            overlap: pm.overlap,
        });
    }
    if DifficultyCounts::of(&pairs) != meta.counts {
        return Err(Error::ManifestMismatch(format!(
            "{}: difficulty histogram does not match the pair labels",
            dir.display()
        )));
    }
    Ok(BenchmarkCase {
        case_id: meta.case_id.clone(),
        mesh,
        spec: PerturbationSpec {
            max_trans: meta.perturbation.max_trans_mm,
            max_rot: meta.perturbation.max_rot_rad,
        },
        params: GenerateParams {
            spacing: meta.spacing_mm,
            seed: meta.seed,
            perturbations_per_pose: meta.perturbations_per_pose,
            min_overlap: meta.min_overlap,
            intrinsics: k,
            pose_loss_weights: meta.pose_loss_weights,
        },
        pairs,
    })
}

/// Reads every case listed in `manifest.json`, checking counts against it.
pub fn read_dataset(root: &Path) -> Result<Vec<BenchmarkCase>> {
    let manifest: DatasetManifest = read_json(&root.join("manifest.json"))?;
    let mut cases = Vec::with_capacity(manifest.cases.len());
    for s in &manifest.cases {
        let case = read_case(&root.join(&s.case_id))?;
        if case.pairs.len() != s.pairs || DifficultyCounts::of(&case.pairs) != s.counts {
            return Err(Error::ManifestMismatch(format!(
                "{}: manifest lists {} pairs, found {}",
                s.case_id,
                s.pairs,
                case.pairs.len()
            )));
        }
        cases.push(case);
    }
    if cases.iter().map(|c| c.pairs.len()).sum::<usize>() != manifest.total_pairs {
        return Err(Error::ManifestMismatch("total pair count differs from manifest".into()));
    }
    Ok(cases)
}
