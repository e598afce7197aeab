//! STL and OBJ readers/writers. Output is an unmerged vertex list plus index triples.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::io::write_atomic;

type RawMesh = (Vec<Point3<f64>>, Vec<[u32; 3]>);

pub fn read_mesh(path: &Path) -> Result<RawMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_str() {
        "stl" => read_stl(path, &bytes),
        "obj" => read_obj(path, &bytes),
        other => Err(Error::parse(path, format!("unsupported mesh extension {other:?}"))),
    }
}

pub fn write_mesh(path: &Path, vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "stl" => stl_bytes(vertices, triangles),
        "obj" => obj_bytes(vertices, triangles),
        other => {
            return Err(Error::InvalidParams(format!(
                "unsupported mesh extension {other:?}"
            )))
        }
    };
    write_atomic(path, &bytes)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

fn read_stl(path: &Path, bytes: &[u8]) -> Result<RawMesh> {
    // A binary file's size is fully determined by its triangle count; an
    // ASCII file may also start with "solid", so check the size first.
    if bytes.len() >= 84 {
        let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        if bytes.len() == 84 + 50 * n {
            return Ok(read_stl_binary(bytes, n));
        }
    }
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::parse(path, "neither binary STL nor UTF-8 ASCII STL"))?;
    if !text.trim_start().starts_with("solid") {
        return Err(Error::parse(path, "ASCII STL must start with 'solid'"));
    }
    read_stl_ascii(path, text)
}

fn read_stl_binary(bytes: &[u8], n: usize) -> RawMesh {
    let f = |o: usize| f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64;
    let mut v = Vec::with_capacity(3 * n);
    let mut t = Vec::with_capacity(n);
    for i in 0..n {
        let base = 84 + 50 * i + 12; // skip the facet normal
        for k in 0..3 {
            let o = base + 12 * k;
            v.push(Point3::new(f(o), f(o + 4), f(o + 8)));
        }
        let b = 3 * i as u32;
        t.push([b, b + 1, b + 2]);
    }
    (v, t)
}

fn read_stl_ascii(path: &Path, text: &str) -> Result<RawMesh> {
    let mut v = Vec::new();
    let mut t = Vec::new();
    let mut facet: Vec<u32> = Vec::with_capacity(3);
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("vertex") => {
                let coords: Vec<f64> = it
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::parse(path, format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(Error::parse(path, format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                facet.push(v.len() as u32);
                v.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("endloop") => {
                if facet.len() != 3 {
                    return Err(Error::parse(
                        path,
                        format!("line {}: facet has {} vertices", lineno + 1, facet.len()),
                    ));
                }
                t.push([facet[0], facet[1], facet[2]]);
                facet.clear();
            }
            _ => {}
        }
    }
    Ok((v, t))
}

fn read_obj(path: &Path, bytes: &[u8]) -> Result<RawMesh> {
    let text = std::str::from_utf8(bytes).map_err(|_| Error::parse(path, "OBJ is not UTF-8"))?;
    let mut v: Vec<Point3<f64>> = Vec::new();
    let mut t = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let err = |m: String| Error::parse(path, format!("line {}: {m}", lineno + 1));
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(e.to_string()))?;
                if c.len() != 3 {
                    return Err(err("vertex needs 3 coordinates".into()));
                }
                v.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| err(format!("bad face index {tok:?}")))?;
                        let resolved = if i < 0 { v.len() as i64 + i } else { i - 1 };
                        if resolved < 0 || resolved >= v.len() as i64 {
                            return Err(err(format!("face index {i} out of range")));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(err("face needs at least 3 vertices".into()));
                }
                // Fan-triangulate polygons.
                for k in 1..idx.len() - 1 {
                    t.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok((v, t))
}

fn obj_bytes(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Vec<u8> {
    let mut s = String::with_capacity(40 * (vertices.len() + triangles.len()));
    for p in vertices {
        writeln!(s, "v {:?} {:?} {:?}", p.x, p.y, p.z).expect("string write");
    }
    for t in triangles {
        writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
    }
    s.into_bytes()
}

fn stl_bytes(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * triangles.len());
    let mut header = [0u8; 80];
    let tag = b"binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(triangles.len() as u32).to_le_bytes());
    for t in triangles {
        let [a, b, c] = t.map(|i| vertices[i as usize]);
        let n = (b - a).cross(&(c - a)).normalize();
        for x in n.iter().chain(a.coords.iter()).chain(b.coords.iter()).chain(c.coords.iter()) {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{box_mesh, AirwayMesh};

    fn cube_ascii_stl() -> String {
        let (v, t) = box_mesh(Point3::new(-1.0, -1.0, -1.0), Point3::new(1.0, 1.0, 1.0));
        let mut s = String::from("solid cube\n");
        for tri in &t {
            s.push_str("  facet normal 0 0 0\n    outer loop\n");
            for &i in tri {
                let p = v[i as usize];
                s.push_str(&format!("      vertex {} {} {}\n", p.x, p.y, p.z));
            }
            s.push_str("    endloop\n  endfacet\n");
        }
        s.push_str("endsolid cube\n");
        s
    }

    #[test]
    fn ascii_stl_cube() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.stl");
        std::fs::write(&path, cube_ascii_stl()).unwrap();
        let m = AirwayMesh::load(&path).unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangles().len(), 12);
        assert!(m.is_watertight());
    }

    #[test]
    fn binary_stl_and_obj_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let (v, t) = box_mesh(Point3::new(-1.0, -2.0, -3.0), Point3::new(1.5, 2.0, 3.25));
        let m = AirwayMesh::new(v, t).unwrap();
        for name in ["cube.stl", "cube.obj"] {
            let path = dir.path().join(name);
            m.save(&path).unwrap();
            let back = AirwayMesh::load(&path).unwrap();
            assert_eq!(back.vertices(), m.vertices(), "{name}");
            assert_eq!(back.triangles(), m.triangles(), "{name}");
        }
    }

    #[test]
    fn obj_polygons_and_negative_indices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4/1/1 -3/2/1 -2/3/1 -1/4/1\n").unwrap();
        let m = AirwayMesh::load(&path).unwrap();
        assert_eq!(m.triangles().len(), 2);
        assert!(!m.is_watertight());
    }

    #[test]
    fn parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let bad_obj = dir.path().join("bad.obj");
        std::fs::write(&bad_obj, "v 0 0 0\nf 1 2 3\n").unwrap();
        assert!(matches!(AirwayMesh::load(&bad_obj), Err(Error::Parse { .. })));
        let bad_stl = dir.path().join("bad.stl");
        std::fs::write(&bad_stl, "not a mesh").unwrap();
        assert!(matches!(AirwayMesh::load(&bad_stl), Err(Error::Parse { .. })));
        let empty = dir.path().join("empty.obj");
        std::fs::write(&empty, "# nothing\n").unwrap();
        assert!(matches!(AirwayMesh::load(&empty), Err(Error::EmptyMesh)));
        let missing = dir.path().join("missing.obj");
        assert!(matches!(AirwayMesh::load(&missing), Err(Error::Io { .. })));
    }
}
