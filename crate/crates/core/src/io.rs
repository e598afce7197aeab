//! Plain-text pose files and atomic file writes.
//!
//! A pose file holds one pose per line as 12 whitespace-separated floats,
//! the row-major 3x4 matrix `[R | t]` with `t` in millimeters. Values are
//! written in shortest round-trip form, so write/read is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::se3::Pose;

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidParams(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn format_pose_line(pose: &Pose) -> String {
    let mut line = String::new();
    for (i, v) in pose.to_row_major().iter().enumerate() {
        if i > 0 {
            line.push(' ');
        }
        write!(line, "{v:?}").expect("string write");
    }
    line
}

pub fn parse_pose_line(line: &str) -> std::result::Result<Pose, String> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|e| format!("{s:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let arr: [f64; 12] = vals
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 12 values, found {}", v.len()))?;
    let pose = Pose::from_row_major(&arr);
    Pose::try_new(*pose.rotation(), *pose.translation(), 1e-6).map_err(|e| e.to_string())
}

pub fn write_poses(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut text = String::new();
    for p in poses {
        text.push_str(&format_pose_line(p));
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

pub fn read_poses(path: &Path) -> Result<Vec<Pose>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_pose_line(l).map_err(|m| Error::parse(path, format!("line {}: {m}", i + 1))))
        .collect()
}
