//! Synthetic airway phantoms with known centerlines.
//!
//! Both phantoms run along +z starting at `inlet_z`, so the world origin
//! lies outside the airway as it does in CT coordinates.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{AirwayMesh, Branch, Centerline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    Cylinder,
    YBranch,
}

impl FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cylinder" => Ok(PhantomKind::Cylinder),
            "y_branch" | "y-branch" | "ybranch" => Ok(PhantomKind::YBranch),
            other => Err(Error::InvalidParams(format!("unknown phantom {other:?}"))),
        }
    }
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::Cylinder => "cylinder",
            PhantomKind::YBranch => "y_branch",
        })
    }
}

/// Closed circular tube with flat end caps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CylinderParams {
    pub radius: f64,
    pub length: f64,
    pub segments: usize,
    /// Subdivisions along the length.
    pub rings: usize,
    pub inlet_z: f64,
}

impl Default for CylinderParams {
    fn default() -> Self {
        Self {
            radius: 8.0,
            length: 100.0,
            segments: 64,
            rings: 50,
            inlet_z: 50.0,
        }
    }
}

impl CylinderParams {
    pub fn vertex_count(&self) -> usize {
        self.segments * (self.rings + 1) + 2
    }

    pub fn triangle_count(&self) -> usize {
        2 * self.segments * self.rings + 2 * self.segments
    }
}

/// Trunk splitting symmetrically into two children in the x-z plane.
///
/// Cross-sections are elliptical (the y semi-axis is `aspect` times the x
/// semi-axis) and radii shrink linearly by `taper` along each branch, so
/// neither roll nor position along a branch is ambiguous from depth alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YBranchParams {
    pub trunk_radius: f64,
    pub trunk_length: f64,
    pub child_radius: f64,
    pub child_length: f64,
    /// Angle of each child from the trunk axis (rad).
    pub branch_angle: f64,
    pub aspect: f64,
    pub taper: f64,
    /// Marching-tetrahedra grid spacing (mm).
    pub grid: f64,
    pub inlet_z: f64,
}

impl Default for YBranchParams {
    fn default() -> Self {
        Self {
            trunk_radius: 8.0,
            trunk_length: 60.0,
            child_radius: 6.0,
            child_length: 50.0,
            branch_angle: 30f64.to_radians(),
            aspect: 0.8,
            taper: 0.15,
            grid: 1.5,
            inlet_z: 50.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomParams {
    Cylinder(CylinderParams),
    YBranch(YBranchParams),
}

impl PhantomParams {
    pub fn default_for(kind: PhantomKind) -> Self {
        match kind {
            PhantomKind::Cylinder => PhantomParams::Cylinder(CylinderParams::default()),
            PhantomKind::YBranch => PhantomParams::YBranch(YBranchParams::default()),
        }
    }

    pub fn kind(&self) -> PhantomKind {
        match self {
            PhantomParams::Cylinder(_) => PhantomKind::Cylinder,
            PhantomParams::YBranch(_) => PhantomKind::YBranch,
        }
    }
}

pub fn make_phantom(params: &PhantomParams) -> Result<(AirwayMesh, Centerline)> {
    match params {
        PhantomParams::Cylinder(p) => cylinder(p),
        PhantomParams::YBranch(p) => y_branch(p),
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParams(format!("{name} must be positive, got {v}")))
    }
}

pub fn cylinder(p: &CylinderParams) -> Result<(AirwayMesh, Centerline)> {
    positive("radius", p.radius)?;
    positive("length", p.length)?;
    if p.segments < 3 || p.rings < 1 {
        return Err(Error::InvalidParams("cylinder needs >= 3 segments and >= 1 ring".into()));
    }
    let (n, m) = (p.segments, p.rings);
    let mut v = Vec::with_capacity(p.vertex_count());
    for ring in 0..=m {
        let z = p.inlet_z + p.length * ring as f64 / m as f64;
        for s in 0..n {
            let a = 2.0 * PI * s as f64 / n as f64;
            v.push(Point3::new(p.radius * a.cos(), p.radius * a.sin(), z));
        }
    }
    let bottom = v.len() as u32;
    v.push(Point3::new(0.0, 0.0, p.inlet_z));
    let top = v.len() as u32;
    v.push(Point3::new(0.0, 0.0, p.inlet_z + p.length));

    let idx = |ring: usize, s: usize| (ring * n + s % n) as u32;
    let mut t = Vec::with_capacity(p.triangle_count());
    for ring in 0..m {
        for s in 0..n {
            let (a, b) = (idx(ring, s), idx(ring, s + 1));
            let (c, d) = (idx(ring + 1, s), idx(ring + 1, s + 1));
            t.push([a, b, d]);
            t.push([a, d, c]);
        }
    }
    for s in 0..n {
        t.push([bottom, idx(0, s + 1), idx(0, s)]);
        t.push([top, idx(m, s), idx(m, s + 1)]);
    }
    let mesh = AirwayMesh::new(v, t)?;
    // Keep cameras one radius away from the flat caps.
    let inset = p.radius.min(0.25 * p.length);
    let cl = Centerline::new(vec![Branch {
        points: vec![
            Point3::new(0.0, 0.0, p.inlet_z + inset),
            Point3::new(0.0, 0.0, p.inlet_z + p.length - inset),
        ],
        parent: None,
    }])?;
    Ok((mesh, cl))
}

/// One tapered elliptical tube with rounded ends, as an implicit function
/// that is negative inside.
struct Tube {
    start: Point3<f64>,
    axis: Vector3<f64>,
    e1: Vector3<f64>,
    e2: Vector3<f64>,
    length: f64,
    radius: f64,
    aspect: f64,
    taper: f64,
}

impl Tube {
    fn new(start: Point3<f64>, axis: Vector3<f64>, length: f64, radius: f64, p: &YBranchParams) -> Self {
        let axis = axis.normalize();
        let e2 = Vector3::y();
        let e1 = e2.cross(&axis).normalize();
        Self {
            start,
            axis,
            e1,
            e2,
            length,
            radius,
            aspect: p.aspect,
            taper: p.taper,
        }
    }

    fn end(&self) -> Point3<f64> {
        self.start + self.axis * self.length
    }

    fn value(&self, p: &Point3<f64>) -> f64 {
        let q = p - self.start;
        let s = q.dot(&self.axis).clamp(0.0, self.length);
        let d = q - self.axis * s;
        let x = d.dot(&self.e1);
        let y = d.dot(&self.e2) / self.aspect;
        let z = d.dot(&self.axis);
        let r = self.radius * (1.0 - self.taper * s / self.length);
        (x * x + y * y + z * z).sqrt() - r
    }
}

pub fn y_branch(p: &YBranchParams) -> Result<(AirwayMesh, Centerline)> {
    for (name, v) in [
        ("trunk_radius", p.trunk_radius),
        ("trunk_length", p.trunk_length),
        ("child_radius", p.child_radius),
        ("child_length", p.child_length),
        ("branch_angle", p.branch_angle),
        ("aspect", p.aspect),
        ("grid", p.grid),
    ] {
        positive(name, v)?;
    }
    if !(p.branch_angle < 0.5 * PI) || !(0.0..1.0).contains(&p.taper) || p.aspect > 1.0 {
        return Err(Error::InvalidParams(
            "need branch_angle < pi/2, taper in [0, 1) and aspect <= 1".into(),
        ));
    }
    let inlet = Point3::new(0.0, 0.0, p.inlet_z);
    let trunk = Tube::new(inlet, Vector3::z(), p.trunk_length, p.trunk_radius, p);
    let fork = trunk.end();
    let (sa, ca) = p.branch_angle.sin_cos();
    let children = [
        Tube::new(fork, Vector3::new(-sa, 0.0, ca), p.child_length, p.child_radius, p),
        Tube::new(fork, Vector3::new(sa, 0.0, ca), p.child_length, p.child_radius, p),
    ];
    let tubes = [&trunk, &children[0], &children[1]];
    let field = |q: &Point3<f64>| tubes.iter().map(|t| t.value(q)).fold(f64::INFINITY, f64::min);

    let reach = p.trunk_radius.max(p.child_radius) + 2.0 * p.grid;
    let mut lo = inlet.coords;
    let mut hi = inlet.coords;
    for t in &tubes {
        for c in [t.start, t.end()] {
            lo = lo.inf(&c.coords);
            hi = hi.sup(&c.coords);
        }
    }
    let lo = Point3::from(lo.add_scalar(-reach));
    let hi = Point3::from(hi.add_scalar(reach));
    let (v, t) = marching_tetrahedra(&field, lo, hi, p.grid);
    let mesh = AirwayMesh::new(v, t)?;
    if !mesh.is_watertight() {
        return Err(Error::InvalidParams(
            "phantom surface is not closed; try a finer grid".into(),
        ));
    }

    // Stay a radius away from the rounded ends.
    let trunk_inset = p.trunk_radius.min(0.25 * p.trunk_length);
    let mut branches = vec![Branch {
        points: vec![inlet + Vector3::z() * trunk_inset, fork],
        parent: None,
    }];
    for c in &children {
        let inset = p.child_radius.min(0.25 * p.child_length);
        branches.push(Branch {
            points: vec![fork, c.start + c.axis * (c.length - inset)],
            parent: Some(0),
        });
    }
    let cl = Centerline::new(branches)?;
    cl.check_inside(&mesh)?;
    Ok((mesh, cl))
}

/// Cube corner offsets indexed by bits (x = 1, y = 2, z = 4).
const CORNER: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [1, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [0, 1, 1],
    [1, 1, 1],
];

/// Six tetrahedra sharing the 0-7 diagonal; neighbouring cubes split their
/// shared faces the same way, so the surface has no cracks.
const TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7],
    [0, 1, 5, 7],
    [0, 2, 3, 7],
    [0, 2, 6, 7],
    [0, 4, 5, 7],
    [0, 4, 6, 7],
];

struct Surface<'a> {
    values: &'a [f64],
    verts: Vec<Point3<f64>>,
    edge_vertex: HashMap<(usize, usize), u32>,
    tris: Vec<[u32; 3]>,
}

impl Surface<'_> {
    /// Shared vertex where the level set crosses grid edge `a`-`b`.
    fn cut(&mut self, a: (usize, Point3<f64>), b: (usize, Point3<f64>)) -> u32 {
        let key = (a.0.min(b.0), a.0.max(b.0));
        let values = self.values;
        let verts = &mut self.verts;
        *self.edge_vertex.entry(key).or_insert_with(|| {
            let (va, vb) = (values[a.0], values[b.0]);
            let t = va / (va - vb);
            verts.push(a.1 + (b.1 - a.1) * t);
            (verts.len() - 1) as u32
        })
    }

    fn emit(&mut self, [a, b, c]: [u32; 3], outward: &Vector3<f64>) {
        let (pa, pb, pc) = (self.verts[a as usize], self.verts[b as usize], self.verts[c as usize]);
        if (pb - pa).cross(&(pc - pa)).dot(outward) >= 0.0 {
            self.tris.push([a, b, c]);
        } else {
            self.tris.push([a, c, b]);
        }
    }
}

/// Triangulates the zero level set of `f` (negative inside) on a regular grid.
/// Triangles face toward positive values.
pub fn marching_tetrahedra(
    f: &dyn Fn(&Point3<f64>) -> f64,
    lo: Point3<f64>,
    hi: Point3<f64>,
    h: f64,
) -> (Vec<Point3<f64>>, Vec<[u32; 3]>) {
    let dims = ((hi - lo) / h).map(|e| e.ceil() as usize + 1);
    let (nx, ny, nz) = (dims.x, dims.y, dims.z);
    let gid = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;
    let point = |i: usize, j: usize, k: usize| {
        Point3::new(lo.x + i as f64 * h, lo.y + j as f64 * h, lo.z + k as f64 * h)
    };
    // Keep the surface off grid nodes so no triangle collapses.
    let snap = 1e-3 * h;
    let mut values = vec![0.0; nx * ny * nz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let v = f(&point(i, j, k));
                values[gid(i, j, k)] = if v.abs() >= snap {
                    v
                } else if v < 0.0 {
                    -snap
                } else {
                    snap
                };
            }
        }
    }

    let mut s = Surface {
        values: &values,
        verts: Vec::new(),
        edge_vertex: HashMap::new(),
        tris: Vec::new(),
    };
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner: [(usize, Point3<f64>); 8] = CORNER.map(|c| {
                    (gid(i + c[0], j + c[1], k + c[2]), point(i + c[0], j + c[1], k + c[2]))
                });
                for tet in TETS {
                    let (inside, outside): (Vec<usize>, Vec<usize>) =
                        tet.iter().partition(|&&c| values[corner[c].0] < 0.0);
                    if inside.is_empty() || outside.is_empty() {
                        continue;
                    }
                    let centroid = |cs: &[usize]| {
                        cs.iter().map(|&c| corner[c].1.coords).sum::<Vector3<f64>>() / cs.len() as f64
                    };
                    let outward = centroid(&outside) - centroid(&inside);
                    if inside.len() == 2 {
                        let (i0, i1) = (corner[inside[0]], corner[inside[1]]);
                        let (o0, o1) = (corner[outside[0]], corner[outside[1]]);
                        let q = [s.cut(i0, o0), s.cut(i0, o1), s.cut(i1, o1), s.cut(i1, o0)];
                        s.emit([q[0], q[1], q[2]], &outward);
                        s.emit([q[0], q[2], q[3]], &outward);
                    } else {
                        let (lone, rest) = if inside.len() == 1 {
                            (inside[0], outside)
                        } else {
                            (outside[0], inside)
                        };
                        let l = corner[lone];
                        let tri = [s.cut(l, corner[rest[0]]), s.cut(l, corner[rest[1]]), s.cut(l, corner[rest[2]])];
                        s.emit(tri, &outward);
                    }
                }
            }
        }
    }
    (s.verts, s.tris)
}
