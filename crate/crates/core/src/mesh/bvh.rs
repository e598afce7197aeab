//! Bounding volume hierarchy over mesh triangles.
//!
//! Built top-down with binned SAH splits; leaves hold at most
//! [`MAX_LEAF_SIZE`] triangles. Nodes are stored depth-first so the left
//! child of node `i` is `i + 1`.

use nalgebra::{Point3, Vector3};

use super::intersect::{closest_point_on_triangle, intersect_triangle, Ray};

pub const MAX_LEAF_SIZE: usize = 4;
const SAH_BINS: usize = 12;
const MAX_SAH_DEPTH: usize = 64;
const STACK_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Point3<f64>,
    pub max: Point3<f64>,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Point3::from(Vector3::repeat(f64::INFINITY)),
            max: Point3::from(Vector3::repeat(f64::NEG_INFINITY)),
        }
    }

    pub fn from_points<'a>(pts: impl IntoIterator<Item = &'a Point3<f64>>) -> Self {
        let mut b = Self::empty();
        for p in pts {
            b.grow_point(p);
        }
        b
    }

    pub fn grow_point(&mut self, p: &Point3<f64>) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn grow(&mut self, other: &Aabb) {
        self.min = self.min.inf(&other.min);
        self.max = self.max.sup(&other.max);
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x
    }

    pub fn contains(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.min[k] && self.max[k] >= other.max[k])
    }

    pub fn extent(&self) -> Vector3<f64> {
        self.max - self.min
    }

    pub fn center(&self) -> Point3<f64> {
        nalgebra::center(&self.min, &self.max)
    }

    fn half_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        e.x * e.y + e.y * e.z + e.z * e.x
    }

    fn distance_squared(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let v = p[k];
            let d = if v < self.min[k] {
                self.min[k] - v
            } else if v > self.max[k] {
                v - self.max[k]
            } else {
                0.0
            };
            d2 += d * d;
        }
        d2
    }

    /// Grows the box by a tiny relative margin so box tests stay conservative
    /// under rounding.
    fn padded(&self) -> Aabb {
        let pad = self.extent().map(|e| e * 1e-9 + 1e-12)
            + self.min.coords.abs().sup(&self.max.coords.abs()) * 1e-12;
        Aabb {
            min: self.min - pad,
            max: self.max + pad,
        }
    }
}

/// 32-byte node with bounds rounded outward to `f32`.
#[derive(Debug, Clone, Copy)]
#[repr(C, align(32))]
struct Node {
    min: [f32; 3],
    /// Leaf: first slot in `order`. Interior: index of the right child.
    start_or_right: u32,
    max: [f32; 3],
    /// Zero for interior nodes.
    count: u32,
}

fn round_down(v: f64) -> f32 {
    let f = v as f32;
    if f as f64 > v {
        f.next_down()
    } else {
        f
    }
}

fn round_up(v: f64) -> f32 {
    let f = v as f32;
    if (f as f64) < v {
        f.next_up()
    } else {
        f
    }
}

#[inline(always)]
fn fmin(a: f64, b: f64) -> f64 {
    if a < b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn fmax(a: f64, b: f64) -> f64 {
    if a > b {
        a
    } else {
        b
    }
}

impl Node {
    fn new(b: &Aabb) -> Self {
        Self {
            min: [0, 1, 2].map(|k| round_down(b.min[k])),
            start_or_right: 0,
            max: [0, 1, 2].map(|k| round_up(b.max[k])),
            count: 0,
        }
    }

    fn bounds(&self) -> Aabb {
        Aabb {
            min: Point3::new(self.min[0] as f64, self.min[1] as f64, self.min[2] as f64),
            max: Point3::new(self.max[0] as f64, self.max[1] as f64, self.max[2] as f64),
        }
    }

    /// Entry parameter of `ray` if it meets the box before `t_max`.
    #[inline(always)]
    fn entry(&self, ray: &Ray, t_max: f64) -> Option<f64> {
        let o = &ray.origin;
        let inv = &ray.inv_dir;
        let (ax, bx) = ((self.min[0] as f64 - o.x) * inv.x, (self.max[0] as f64 - o.x) * inv.x);
        let (ay, by) = ((self.min[1] as f64 - o.y) * inv.y, (self.max[1] as f64 - o.y) * inv.y);
        let (az, bz) = ((self.min[2] as f64 - o.z) * inv.z, (self.max[2] as f64 - o.z) * inv.z);
        // A NaN slab (ray in the slab plane, 0 * inf) drops out: each helper
        // returns its second operand when the comparison is unordered.
        let t0 = fmax(fmin(az, bz), fmax(fmin(ay, by), fmax(fmin(ax, bx), 0.0)));
        let t1 = fmin(fmax(az, bz), fmin(fmax(ay, by), fmin(fmax(ax, bx), t_max)));
        (t0 <= t1).then_some(t0)
    }
}

#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<Node>,
    /// Original triangle index per slot.
    order: Vec<u32>,
    /// Triangle corners per slot, in traversal order.
    tris: Vec<[Point3<f64>; 3]>,
}

struct BuildRef {
    bounds: Aabb,
    centroid: Point3<f64>,
    index: u32,
}

impl Bvh {
    pub fn build(vertices: &[Point3<f64>], triangles: &[[u32; 3]]) -> Self {
        let mut refs: Vec<BuildRef> = triangles
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let pts = t.map(|k| vertices[k as usize]);
                let bounds = Aabb::from_points(pts.iter());
                BuildRef {
                    bounds,
                    centroid: bounds.center(),
                    index: i as u32,
                }
            })
            .collect();
        let mut bvh = Bvh {
            nodes: Vec::with_capacity(2 * triangles.len() / MAX_LEAF_SIZE + 1),
            order: Vec::with_capacity(triangles.len()),
            tris: Vec::with_capacity(triangles.len()),
        };
        if !refs.is_empty() {
            bvh.build_node(&mut refs, 0);
        }
        bvh.tris = bvh
            .order
            .iter()
            .map(|&i| triangles[i as usize].map(|k| vertices[k as usize]))
            .collect();
        bvh
    }

    fn build_node(&mut self, refs: &mut [BuildRef], depth: usize) -> usize {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for r in refs.iter() {
            bounds.grow(&r.bounds);
            cbounds.grow_point(&r.centroid);
        }
        let idx = self.nodes.len();
        self.nodes.push(Node::new(&bounds.padded()));
        if refs.len() <= MAX_LEAF_SIZE {
            self.nodes[idx].start_or_right = self.order.len() as u32;
            self.nodes[idx].count = refs.len() as u32;
            self.order.extend(refs.iter().map(|r| r.index));
            return idx;
        }

        // Past MAX_SAH_DEPTH fall back to balanced splits so traversal stacks stay bounded.
        let sah = if depth < MAX_SAH_DEPTH {
            sah_partition(refs, &cbounds)
        } else {
            None
        };
        let mid = sah.unwrap_or(refs.len() / 2);
        let (left, right) = refs.split_at_mut(mid);
        self.build_node(left, depth + 1);
        let r = self.build_node(right, depth + 1);
        self.nodes[idx].start_or_right = r as u32;
        idx
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes.first().map(Node::bounds).unwrap_or_else(Aabb::empty)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Checks structural invariants: every triangle in exactly one leaf,
    /// leaves within the size cap, parents enclosing children and triangles.
    pub fn validate(&self, triangle_count: usize) -> Result<(), String> {
        let mut seen = vec![0u32; triangle_count];
        for (i, n) in self.nodes.iter().enumerate() {
            if n.count > 0 {
                if n.count as usize > MAX_LEAF_SIZE {
                    return Err(format!("leaf {i} holds {} triangles", n.count));
                }
                let s = n.start_or_right as usize;
                for slot in s..s + n.count as usize {
                    seen[self.order[slot] as usize] += 1;
                    let tb = Aabb::from_points(self.tris[slot].iter());
                    if !n.bounds().contains(&tb) {
                        return Err(format!("leaf {i} does not enclose its triangle"));
                    }
                }
            } else {
                for c in [i + 1, n.start_or_right as usize] {
                    if !n.bounds().contains(&self.nodes[c].bounds()) {
                        return Err(format!("node {i} does not enclose child {c}"));
                    }
                }
            }
        }
        match seen.iter().position(|&c| c != 1) {
            Some(t) => Err(format!("triangle {t} appears in {} leaves", seen[t])),
            None => Ok(()),
        }
    }

    /// Nearest hit as `(t, original triangle index)`.
    pub fn closest_hit(&self, ray: &Ray) -> Option<(f64, usize)> {
        let root = self.nodes.first()?;
        root.entry(ray, f64::INFINITY)?;
        let mut best = f64::INFINITY;
        let mut best_slot = usize::MAX;
        let mut stack = [0u32; STACK_SIZE];
        let mut sp = 0usize;
        let mut current = 0usize;
        loop {
            let node = &self.nodes[current];
            if node.count > 0 {
                let s = node.start_or_right as usize;
                for slot in s..s + node.count as usize {
                    let [a, b, c] = &self.tris[slot];
                    if let Some(t) = intersect_triangle(ray, a, b, c) {
                        if t < best {
                            best = t;
                            best_slot = slot;
                        }
                    }
                }
            } else {
                let (l, r) = (current + 1, node.start_or_right as usize);
                let tl = self.nodes[l].entry(ray, best);
                let tr = self.nodes[r].entry(ray, best);
                match (tl, tr) {
                    (Some(a), Some(b)) => {
                        let (near, far) = if a <= b { (l, r) } else { (r, l) };
                        stack[sp] = far as u32;
                        sp += 1;
                        current = near;
                        continue;
                    }
                    (Some(_), None) => {
                        current = l;
                        continue;
                    }
                    (None, Some(_)) => {
                        current = r;
                        continue;
                    }
                    (None, None) => {}
                }
            }
            // Pop, skipping nodes the current best already excludes.
            loop {
                if sp == 0 {
                    return (best_slot != usize::MAX).then(|| (best, self.order[best_slot] as usize));
                }
                sp -= 1;
                let n = stack[sp] as usize;
                if self.nodes[n].entry(ray, best).is_some() {
                    current = n;
                    break;
                }
            }
        }
    }

    /// Appends every hit parameter along `ray` to `hits` (unsorted).
    pub fn all_hits(&self, ray: &Ray, hits: &mut Vec<f64>) {
        if self.nodes.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = &self.nodes[i];
            if node.entry(ray, f64::INFINITY).is_none() {
                continue;
            }
            if node.count > 0 {
                let s = node.start_or_right as usize;
                for slot in s..s + node.count as usize {
                    let [a, b, c] = &self.tris[slot];
                    if let Some(t) = intersect_triangle(ray, a, b, c) {
                        hits.push(t);
                    }
                }
            } else {
                stack.push(node.start_or_right as usize);
                stack.push(i + 1);
            }
        }
    }

    /// Closest point on the surface to `p` and its original triangle index.
    pub fn closest_point(&self, p: &Point3<f64>) -> (Point3<f64>, usize) {
        let mut best_d2 = f64::INFINITY;
        let mut best = (*p, usize::MAX);
        let mut stack: Vec<(usize, f64)> = vec![(0, 0.0)];
        while let Some((i, d2)) = stack.pop() {
            if d2 > best_d2 {
                continue;
            }
            let node = &self.nodes[i];
            if node.count > 0 {
                let s = node.start_or_right as usize;
                for slot in s..s + node.count as usize {
                    let [a, b, c] = &self.tris[slot];
                    let q = closest_point_on_triangle(p, a, b, c);
                    let dq = (q - p).norm_squared();
                    if dq < best_d2 {
                        best_d2 = dq;
                        best = (q, self.order[slot] as usize);
                    }
                }
            } else {
                let (l, r) = (i + 1, node.start_or_right as usize);
                let dl = self.nodes[l].bounds().distance_squared(p);
                let dr = self.nodes[r].bounds().distance_squared(p);
                // Push the farther child first so the nearer one is visited next.
                if dl <= dr {
                    stack.push((r, dr));
                    stack.push((l, dl));
                } else {
                    stack.push((l, dl));
                    stack.push((r, dr));
                }
            }
        }
        best
    }
}

/// Partitions `refs` at the cheapest binned SAH plane; returns the split index.
fn sah_partition(refs: &mut [BuildRef], cbounds: &Aabb) -> Option<usize> {
    let extent = cbounds.extent();
    let mut best: Option<(f64, usize, usize)> = None; // (cost, axis, bin)
    for axis in 0..3 {
        if extent[axis] <= 0.0 {
            continue;
        }
        let scale = SAH_BINS as f64 / extent[axis];
        let bin_of = |r: &BuildRef| (((r.centroid[axis] - cbounds.min[axis]) * scale) as usize).min(SAH_BINS - 1);
        let mut bins = [(Aabb::empty(), 0usize); SAH_BINS];
        for r in refs.iter() {
            let b = &mut bins[bin_of(r)];
            b.0.grow(&r.bounds);
            b.1 += 1;
        }
        let mut right_area = [0.0; SAH_BINS];
        let mut right_count = [0usize; SAH_BINS];
        let mut acc = Aabb::empty();
        let mut n = 0;
        for k in (1..SAH_BINS).rev() {
            acc.grow(&bins[k].0);
            n += bins[k].1;
            right_area[k] = acc.half_area();
            right_count[k] = n;
        }
        let mut acc = Aabb::empty();
        let mut n = 0;
        for k in 0..SAH_BINS - 1 {
            acc.grow(&bins[k].0);
            n += bins[k].1;
            if n == 0 || right_count[k + 1] == 0 {
                continue;
            }
            let cost = acc.half_area() * n as f64 + right_area[k + 1] * right_count[k + 1] as f64;
            if best.map_or(true, |(c, _, _)| cost < c) {
                best = Some((cost, axis, k + 1));
            }
        }
    }
    let (_, axis, split_bin) = best?;
    let scale = SAH_BINS as f64 / extent[axis];
    let mut mid = 0;
    for i in 0..refs.len() {
        let b = (((refs[i].centroid[axis] - cbounds.min[axis]) * scale) as usize).min(SAH_BINS - 1);
        if b < split_bin {
            refs.swap(i, mid);
            mid += 1;
        }
    }
    Some(mid)
}
