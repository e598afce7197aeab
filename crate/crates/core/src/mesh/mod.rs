//! Airway surface meshes: ingestion, ray casting, and signed distance.

mod bvh;
pub mod centerline;
mod intersect;
mod load;
mod render;
mod sdf;

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{Point3, Vector3};

pub use bvh::{Aabb, Bvh};
pub use centerline::{sample_centerline, sample_centerline_poses, Branch, Centerline, CenterlineSample};
pub use intersect::{closest_point_on_triangle, intersect_relative, intersect_triangle, Ray, Shear};
pub use render::{pixel_ray, render_depth, render_depth_bvh};
pub use sdf::{sdf, SdfSample};

use crate::error::{Error, Result};

/// Vertices closer than this are merged on ingestion (mm).
pub const MERGE_TOLERANCE: f64 = 1e-6;

/// Triangles whose doubled area falls below this are dropped (mm^2).
const MIN_DOUBLE_AREA: f64 = 1e-12;

/// Cleaned, indexed triangle mesh with its BVH.
#[derive(Debug, Clone)]
pub struct AirwayMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vector3<f64>>,
    watertight: bool,
    bvh: Bvh,
}

impl AirwayMesh {
    /// Cleans raw geometry (vertex merge, degenerate-triangle removal) and
    /// builds the acceleration structure.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if let Some(bad) = triangles
            .iter()
            .flatten()
            .find(|&&i| i as usize >= vertices.len())
        {
            return Err(Error::InvalidParams(format!(
                "triangle index {bad} out of range ({} vertices)",
                vertices.len()
            )));
        }
        if vertices.iter().any(|v| !v.coords.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidParams("non-finite vertex".into()));
        }
        let (vertices, triangles) = clean(vertices, triangles);
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let normals = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                (b - a).cross(&(c - a)).normalize()
            })
            .collect();
        let watertight = is_edge_manifold(&triangles);
        let bvh = Bvh::build(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            normals,
            watertight,
            bvh,
        })
    }

    /// Loads STL (binary or ASCII) or OBJ, chosen by extension.
    pub fn load(path: &Path) -> Result<Self> {
        let (v, t) = load::read_mesh(path)?;
        Self::new(v, t)
    }

    /// Writes OBJ with full-precision coordinates, or binary STL.
    pub fn save(&self, path: &Path) -> Result<()> {
        load::write_mesh(path, &self.vertices, &self.triangles)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    pub fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    pub fn triangle(&self, i: usize) -> [Point3<f64>; 3] {
        self.triangles[i].map(|k| self.vertices[k as usize])
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    /// Nearest intersection parameter along `ray`, if any.
    pub fn closest_hit(&self, ray: &Ray) -> Option<f64> {
        self.bvh.closest_hit(ray).map(|(t, _)| t)
    }

    /// Closest surface point and its triangle.
    pub fn closest_point(&self, p: &Point3<f64>) -> (Point3<f64>, usize) {
        self.bvh.closest_point(p)
    }

    pub fn unsigned_distance(&self, p: &Point3<f64>) -> f64 {
        (self.closest_point(p).0 - p).norm()
    }
}

fn clean(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let cell = |p: &Point3<f64>| -> [i64; 3] { p.coords.map(|c| (c / MERGE_TOLERANCE).floor() as i64).into() };
    let mut grid: HashMap<[i64; 3], Vec<u32>> = HashMap::new();
    let mut remap = vec![0u32; vertices.len()];
    let mut merged: Vec<Point3<f64>> = Vec::with_capacity(vertices.len());
    for (i, v) in vertices.iter().enumerate() {
        let c = cell(v);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = grid.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &id in ids {
                            if (merged[id as usize] - v).norm() <= MERGE_TOLERANCE {
                                found = Some(id);
                                break 'search;
                            }
                        }
                    }
                }
            }
        }
        remap[i] = found.unwrap_or_else(|| {
            let id = merged.len() as u32;
            merged.push(*v);
            grid.entry(c).or_default().push(id);
            id
        });
    }

    let mut kept = Vec::with_capacity(triangles.len());
    for t in triangles {
        let t = t.map(|i| remap[i as usize]);
        if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
            continue;
        }
        let [a, b, c] = t.map(|i| merged[i as usize]);
        if (b - a).cross(&(c - a)).norm() <= MIN_DOUBLE_AREA {
            continue;
        }
        kept.push(t);
    }

    // Drop vertices no triangle references, keeping first-use order stable.
    let mut used = vec![u32::MAX; merged.len()];
    let mut compact = Vec::new();
    for t in &kept {
        for &i in t {
            if used[i as usize] == u32::MAX {
                used[i as usize] = compact.len() as u32;
                compact.push(merged[i as usize]);
            }
        }
    }
    let kept = kept.into_iter().map(|t| t.map(|i| used[i as usize])).collect();
    (compact, kept)
}

/// Every undirected edge is shared by exactly two triangles.
fn is_edge_manifold(triangles: &[[u32; 3]]) -> bool {
    let mut edges: HashMap<(u32, u32), u32> = HashMap::with_capacity(triangles.len() * 3 / 2);
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    edges.values().all(|&n| n == 2)
}

/// Axis-aligned box `[min, max]` as a closed, outward-facing triangle mesh.
pub fn box_mesh(min: Point3<f64>, max: Point3<f64>) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let v: Vec<Point3<f64>> = (0..8)
        .map(|i| {
            Point3::new(
                if i & 1 == 0 { min.x } else { max.x },
                if i & 2 == 0 { min.y } else { max.y },
                if i & 4 == 0 { min.z } else { max.z },
            )
        })
        .collect();
    let t = vec![
        [0, 2, 3], [0, 3, 1], // -z
        [4, 5, 7], [4, 7, 6], // +z
        [0, 1, 5], [0, 5, 4], // -y
        [2, 6, 7], [2, 7, 3], // +y
        [0, 4, 6], [0, 6, 2], // -x
        [1, 3, 7], [1, 7, 5], // +x
    ];
    (v, t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> AirwayMesh {
        let (v, t) = box_mesh(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
        AirwayMesh::new(v, t).unwrap()
    }

    #[test]
    fn cube_is_watertight_with_outward_normals() {
        let m = unit_cube();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangles().len(), 12);
        assert!(m.is_watertight());
        for (i, n) in m.normals().iter().enumerate() {
            let [a, b, c] = m.triangle(i);
            let centroid = (a.coords + b.coords + c.coords) / 3.0;
            assert!(n.dot(&centroid) > 0.0, "normal {i} points inward");
        }
    }

    #[test]
    fn open_cube_is_not_watertight() {
        let (v, mut t) = box_mesh(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
        t.truncate(10);
        let m = AirwayMesh::new(v, t).unwrap();
        assert!(!m.is_watertight());
    }

    #[test]
    fn duplicate_vertices_merge_and_degenerates_drop() {
        // Triangle soup: each triangle carries its own copies of the corners.
        let (v, t) = box_mesh(Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 3.0, 4.0));
        let mut soup_v = Vec::new();
        let mut soup_t = Vec::new();
        for tri in &t {
            let base = soup_v.len() as u32;
            for &i in tri {
                let jitter = 1e-7 * ((base / 3) % 3) as f64;
                soup_v.push(v[i as usize] + Vector3::repeat(jitter));
            }
            soup_t.push([base, base + 1, base + 2]);
        }
        // A sliver whose corners collapse into one vertex.
        let base = soup_v.len() as u32;
        soup_v.extend([v[0], v[0] + Vector3::repeat(2e-7), v[0]]);
        soup_t.push([base, base + 1, base + 2]);
        let m = AirwayMesh::new(soup_v, soup_t).unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangles().len(), 12);
        assert!(m.is_watertight());
    }

    #[test]
    fn empty_after_cleaning() {
        let v = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        assert!(matches!(AirwayMesh::new(v, vec![[0, 1, 2]]), Err(Error::EmptyMesh)));
    }

    #[test]
    fn out_of_range_index() {
        let v = vec![Point3::origin()];
        assert!(matches!(AirwayMesh::new(v, vec![[0, 1, 2]]), Err(Error::InvalidParams(_))));
    }
}
