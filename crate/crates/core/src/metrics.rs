//! Depth-similarity and pose-accuracy metrics, per pair and aggregated.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::camera::CameraIntrinsics;
use crate::depth::DepthMap;
use crate::error::{Error, Result};
use crate::losses::Difficulty;
use crate::mesh::{sdf, AirwayMesh};
use crate::se3::{geodesic_distance, Pose};

/// Fewest jointly valid pixels a depth metric accepts.
pub const MIN_METRIC_PIXELS: usize = 100;

fn joint_pairs(pred: &DepthMap, reference: &DepthMap) -> Result<Vec<(f64, f64)>> {
    pred.check_size(reference)?;
    let pairs: Vec<(f64, f64)> = (0..pred.len())
        .filter(|&i| pred.valid_mask()[i] && reference.valid_mask()[i])
        .map(|i| (pred.values()[i] as f64, reference.values()[i] as f64))
        .collect();
    if pairs.len() < MIN_METRIC_PIXELS {
        return Err(Error::DegenerateMap(format!(
            "{} jointly valid pixels, need {MIN_METRIC_PIXELS}",
            pairs.len()
        )));
    }
    Ok(pairs)
}

fn mad_normalize(x: &[f64]) -> Result<Vec<f64>> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let mad = x.iter().map(|v| (v - mean).abs()).sum::<f64>() / n;
    if mad < 1e-12 {
        return Err(Error::DegenerateMap("constant depth map (zero MAD)".into()));
    }
    Ok(x.iter().map(|v| (v - mean) / mad).collect())
}

/// Cosine similarity of the MAD-normalized jointly valid depths.
pub fn metric_ds(pred: &DepthMap, reference: &DepthMap) -> Result<f64> {
    let pairs = joint_pairs(pred, reference)?;
    let a = mad_normalize(&pairs.iter().map(|p| p.0).collect::<Vec<_>>())?;
    let b = mad_normalize(&pairs.iter().map(|p| p.1).collect::<Vec<_>>())?;
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

fn camera_point(d: &DepthMap, k: &CameraIntrinsics, col: usize, row: usize) -> Vector3<f64> {
    let z = d.values()[row * d.width() + col] as f64;
    k.ray_direction(col as f64, row as f64) * z
}

/// Unit normal from central differences, or `None` when degenerate.
fn normal_at(d: &DepthMap, k: &CameraIntrinsics, col: usize, row: usize) -> Option<Vector3<f64>> {
    let tx = camera_point(d, k, col + 1, row) - camera_point(d, k, col - 1, row);
    let ty = camera_point(d, k, col, row + 1) - camera_point(d, k, col, row - 1);
    let n = tx.cross(&ty);
    let len = n.norm();
    (len > 0.0 && len.is_finite()).then(|| n / len)
}

/// Mean cosine between surface normals of the two back-projected maps.
///
/// Only interior pixels whose 4-neighbourhood is valid in both maps count.
pub fn metric_nc(pred: &DepthMap, reference: &DepthMap, k: &CameraIntrinsics) -> Result<f64> {
    joint_pairs(pred, reference)?;
    let (w, h) = (pred.width(), pred.height());
    if w != k.width || h != k.height {
        return Err(Error::SizeMismatch(format!(
            "depth is {w}x{h}, intrinsics are {}x{}",
            k.width, k.height
        )));
    }
    let ok = |c: usize, r: usize| {
        let i = r * w + c;
        pred.valid_mask()[i] && reference.valid_mask()[i]
    };
    let mut sum = 0.0;
    let mut n = 0usize;
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            if !(ok(c, r) && ok(c - 1, r) && ok(c + 1, r) && ok(c, r - 1) && ok(c, r + 1)) {
                continue;
            }
            if let (Some(a), Some(b)) = (normal_at(pred, k, c, r), normal_at(reference, k, c, r)) {
                sum += a.dot(&b);
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::DegenerateMap("no interior pixels with valid normals".into()));
    }
    Ok((sum / n as f64).clamp(-1.0, 1.0))
}

/// Scale-invariant log error: the variance of `log pred - log ref`.
pub fn metric_si(pred: &DepthMap, reference: &DepthMap) -> Result<f64> {
    let pairs = joint_pairs(pred, reference)?;
    let z: Vec<f64> = pairs.iter().map(|(p, r)| p.ln() - r.ln()).collect();
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    Ok((z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(0.0))
}

/// Translation error (mm) and geodesic rotation error (rad).
pub fn pose_errors(pred: &Pose, gt: &Pose) -> (f64, f64) {
    (
        (pred.translation() - gt.translation()).norm(),
        geodesic_distance(pred.rotation(), gt.rotation()),
    )
}

/// True when the camera center lies strictly inside the lumen.
pub fn success(mesh: &AirwayMesh, pred: &Pose) -> Result<bool> {
    Ok(sdf(mesh, &pred.center())?.value < 0.0)
}

/// Metrics of one registered pair. Depth metrics are `None` when they could
/// not be computed (for example a final pose that sees too little surface).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub case_id: String,
    pub frame_id: usize,
    pub difficulty: Difficulty,
    pub ds: Option<f64>,
    pub nc: Option<f64>,
    pub si: Option<f64>,
    pub trans_err: f64,
    pub rot_err: f64,
    pub success: bool,
    pub init_trans_err: f64,
    pub init_rot_err: f64,
    pub evaluations: usize,
}

impl MetricsRow {
    /// Scores `pred` against the ground truth.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        case_id: &str,
        frame_id: usize,
        difficulty: Difficulty,
        mesh: &AirwayMesh,
        k: &CameraIntrinsics,
        pred_pose: &Pose,
        pred_depth: &DepthMap,
        gt_pose: &Pose,
        gt_depth: &DepthMap,
        init_pose: &Pose,
        evaluations: usize,
    ) -> Result<MetricsRow> {
        let (trans_err, rot_err) = pose_errors(pred_pose, gt_pose);
        let (init_trans_err, init_rot_err) = pose_errors(init_pose, gt_pose);
        Ok(MetricsRow {
            case_id: case_id.to_string(),
            frame_id,
            difficulty,
            ds: metric_ds(pred_depth, gt_depth).ok(),
            nc: metric_nc(pred_depth, gt_depth, k).ok(),
            si: metric_si(pred_depth, gt_depth).ok(),
            trans_err,
            rot_err,
            success: success(mesh, pred_pose)?,
            init_trans_err,
            init_rot_err,
            evaluations,
        })
    }
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::MalformedCsv(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::MalformedCsv(e.to_string()))?;
    crate::io::write_atomic(path, &bytes)
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_metrics_csv(&bytes)
}

pub fn parse_metrics_csv(bytes: &[u8]) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::MalformedCsv(format!("row {}: {e}", i + 1))))
        .collect()
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<MeanStd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(MeanStd { mean, std: var.sqrt() })
    }
}

/// Aggregates for one difficulty level (or all pairs), over successful pairs only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: String,
    pub pairs: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ds: Option<MeanStd>,
    pub nc: Option<MeanStd>,
    pub si: Option<MeanStd>,
    pub trans_err: Option<MeanStd>,
    pub rot_err: Option<MeanStd>,
}

/// Per-level aggregates followed by an `average` row pooling all pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsSummary {
    pub levels: Vec<LevelSummary>,
}

fn summarize_level(level: &str, rows: &[&MetricsRow]) -> LevelSummary {
    // Sorting makes the sums independent of input row order.
    let collect = |f: &dyn Fn(&MetricsRow) -> Option<f64>| {
        let mut v: Vec<f64> = rows.iter().filter(|r| r.success).filter_map(|r| f(r)).collect();
        v.sort_by(|a, b| a.total_cmp(b));
        MeanStd::of(&v)
    };
    let successes = rows.iter().filter(|r| r.success).count();
    LevelSummary {
        level: level.to_string(),
        pairs: rows.len(),
        successes,
        success_rate: if rows.is_empty() { 0.0 } else { successes as f64 / rows.len() as f64 },
        ds: collect(&|r| r.ds),
        nc: collect(&|r| r.nc),
        si: collect(&|r| r.si),
        trans_err: collect(&|r| Some(r.trans_err)),
        rot_err: collect(&|r| Some(r.rot_err)),
    }
}

pub fn summarize(rows: &[MetricsRow]) -> MetricsSummary {
    if rows.is_empty() {
        return MetricsSummary::default();
    }
    let mut by_level: BTreeMap<Difficulty, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        by_level.entry(r.difficulty).or_default().push(r);
    }
    let mut levels: Vec<LevelSummary> = by_level
        .iter()
        .map(|(d, rs)| summarize_level(d.as_str(), rs))
        .collect();
    let all: Vec<&MetricsRow> = rows.iter().collect();
    levels.push(summarize_level("average", &all));
    MetricsSummary { levels }
}

impl MetricsSummary {
    pub fn level(&self, name: &str) -> Option<&LevelSummary> {
        self.levels.iter().find(|l| l.level == name)
    }

    /// Fixed-width text table, one row per level.
    pub fn to_table(&self) -> String {
        let cell = |m: &Option<MeanStd>, prec: usize| match m {
            Some(m) => format!("{:.p$} ± {:.p$}", m.mean, m.std, p = prec),
            None => "n/a".to_string(),
        };
        let mut out = format!(
            "{:<8} {:>6} {:>17} {:>17} {:>17} {:>17} {:>17} {:>8}\n",
            "Level", "Pairs", "DS", "NC", "SI", "Trans. Err (mm)", "Rot. Err (rad)", "Success"
        );
        for l in &self.levels {
            let name = match l.level.as_str() {
                "average" => "Average".to_string(),
                s => {
                    let mut c = s.chars();
                    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
                }
            };
            out.push_str(&format!(
                "{:<8} {:>6} {:>17} {:>17} {:>17} {:>17} {:>17} {:>7.1}%\n",
                name,
                l.pairs,
                cell(&l.ds, 3),
                cell(&l.nc, 3),
                cell(&l.si, 4),
                cell(&l.trans_err, 2),
                cell(&l.rot_err, 3),
                100.0 * l.success_rate
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::so3_exp;
    use approx::assert_relative_eq;

    fn bumpy(w: usize, h: usize) -> DepthMap {
        DepthMap::from_fn(w, h, |c, r| {
            Some(30.0 + 4.0 * ((c as f32) * 0.21).sin() + 3.0 * ((r as f32) * 0.17).cos())
        })
    }

    #[test]
    fn ds_examples() {
        let d = bumpy(40, 30);
        assert_relative_eq!(metric_ds(&d, &d).unwrap(), 1.0, epsilon = 1e-12);
        let affine = d.map_valid(|_, v| 2.5 * v + 7.0);
        assert_relative_eq!(metric_ds(&d, &affine).unwrap(), 1.0, epsilon = 1e-9);
        // A negated map is not a valid depth map, so flip around the mean instead.
        let flipped = d.map_valid(|_, v| 80.0 - v);
        assert_relative_eq!(metric_ds(&d, &flipped).unwrap(), -1.0, epsilon = 1e-6);
        let flat = DepthMap::from_fn(40, 30, |_, _| Some(5.0));
        assert!(matches!(metric_ds(&d, &flat), Err(Error::DegenerateMap(_))));
        let tiny = bumpy(9, 9);
        assert!(matches!(metric_ds(&tiny, &tiny), Err(Error::DegenerateMap(_))));
    }

    #[test]
    fn si_examples() {
        let d = bumpy(40, 30);
        assert_eq!(metric_si(&d, &d).unwrap(), 0.0);
        assert!(metric_si(&d.scaled(3.7), &d).unwrap() < 1e-9);
    }

    fn plane(k: &CameraIntrinsics, normal: Vector3<f64>, dist: f64) -> DepthMap {
        // Points p with n.p = dist; along ray r(z) = dir * z, z = dist / (n.dir).
        DepthMap::from_fn(k.width, k.height, |c, r| {
            let dir = k.ray_direction(c as f64, r as f64);
            Some((dist / normal.dot(&dir)) as f32)
        })
    }

    #[test]
    fn nc_planes() {
        let k = CameraIntrinsics::new(60.0, 60.0, 31.5, 31.5, 64, 64).unwrap();
        let front = plane(&k, Vector3::z(), 100.0);
        assert_relative_eq!(metric_nc(&front, &front, &k).unwrap(), 1.0, epsilon = 1e-12);
        let a = 30f64.to_radians();
        let tilted = plane(&k, Vector3::new(a.sin(), 0.0, a.cos()), 100.0);
        assert_relative_eq!(metric_nc(&front, &tilted, &k).unwrap(), a.cos(), epsilon = 1e-3);
    }

    #[test]
    fn pose_error_examples() {
        let gt = Pose::new(so3_exp(&Vector3::new(0.2, -0.1, 0.4)), Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(pose_errors(&gt, &gt), (0.0, 0.0));
        let moved = Pose::new(*gt.rotation(), gt.translation() + Vector3::new(3.0, 4.0, 0.0));
        assert_relative_eq!(pose_errors(&moved, &gt).0, 5.0, epsilon = 1e-12);
        let axis = Vector3::new(0.3, 0.4, -0.5).normalize();
        let turned = Pose::new(gt.rotation() * so3_exp(&(axis * 0.19)), *gt.translation());
        assert_relative_eq!(pose_errors(&turned, &gt).1, 0.19, epsilon = 1e-12);
    }

    fn row(d: Difficulty, success: bool, t: f64) -> MetricsRow {
        MetricsRow {
            case_id: "case_00".into(),
            frame_id: 0,
            difficulty: d,
            ds: Some(0.9),
            nc: None,
            si: Some(0.01),
            trans_err: t,
            rot_err: 0.1,
            success,
            init_trans_err: 5.0,
            init_rot_err: 0.3,
            evaluations: 10,
        }
    }

    #[test]
    fn summary_pools_successes() {
        let rows = vec![
            row(Difficulty::Easy, true, 1.0),
            row(Difficulty::Hard, true, 3.0),
            row(Difficulty::Hard, false, 100.0),
        ];
        let s = summarize(&rows);
        assert_eq!(s.levels.len(), 3);
        let avg = s.level("average").unwrap();
        assert_eq!(avg.pairs, 3);
        assert_relative_eq!(avg.success_rate, 2.0 / 3.0);
        assert_eq!(avg.trans_err.unwrap().mean, 2.0);
        assert_eq!(avg.trans_err.unwrap().std, 1.0);
        assert!(avg.nc.is_none());
        assert!(s.to_table().contains("n/a"));
        let hard = s.level("hard").unwrap();
        assert_eq!(hard.trans_err.unwrap().mean, 3.0);
        assert!(summarize(&[]).levels.is_empty());
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![row(Difficulty::Medium, true, 0.123456789012345), row(Difficulty::Easy, false, 2.0)];
        write_metrics_csv(&path, &rows).unwrap();
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
        assert!(matches!(
            parse_metrics_csv(b"case_id,frame_id\nx,notanumber\n"),
            Err(Error::MalformedCsv(_))
        ));
    }
}
