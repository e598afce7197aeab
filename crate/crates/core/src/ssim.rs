//! Masked multi-scale structural similarity for depth maps.
//!
//! Five scales, 11x11 Gaussian window (sigma 1.5) evaluated in "valid" mode,
//! and the usual scale weights. Pixels invalid in either map are filled with
//! that map's mean over the jointly valid pixels before filtering, and only
//! windows centered on jointly valid pixels are averaged. Coarser scales use
//! 2x2 average pooling; a pooled pixel stays valid when at least 3 of its 4
//! parents are.

use crate::depth::DepthMap;
use crate::error::{Error, Result};

pub const SCALE_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Smallest joint valid region accepted (16 x 16 pixels).
pub const MIN_VALID: usize = 256;

/// Smallest image side that keeps all five pyramid levels at least one window wide.
pub const MIN_SIDE: usize = WINDOW << (SCALE_WEIGHTS.len() - 1);

/// Single-channel image with a validity mask, row-major.
#[derive(Debug, Clone)]
struct Plane {
    w: usize,
    h: usize,
    v: Vec<f64>,
    m: Vec<bool>,
}

impl Plane {
    fn downsample(&self) -> Plane {
        let (w, h) = (self.w / 2, self.h / 2);
        let mut v = Vec::with_capacity(w * h);
        let mut m = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let idx = [
                    2 * r * self.w + 2 * c,
                    2 * r * self.w + 2 * c + 1,
                    (2 * r + 1) * self.w + 2 * c,
                    (2 * r + 1) * self.w + 2 * c + 1,
                ];
                v.push(0.25 * idx.iter().map(|&i| self.v[i]).sum::<f64>());
                m.push(idx.iter().filter(|&&i| self.m[i]).count() >= 3);
            }
        }
        Plane { w, h, v, m }
    }
}

fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, x) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *x = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|x| *x /= s);
    k
}

/// Separable "valid" Gaussian filter of `a`, `b`, `a^2`, `b^2` and `ab`.
fn filter_moments(a: &[f64], b: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> [Vec<f64>; 5] {
    let ow = w + 1 - WINDOW;
    let oh = h + 1 - WINDOW;
    let mut tmp: [Vec<f64>; 5] = std::array::from_fn(|_| Vec::with_capacity(ow * h));
    for r in 0..h {
        let (ra, rb) = (&a[r * w..(r + 1) * w], &b[r * w..(r + 1) * w]);
        for c in 0..ow {
            let (wa, wb) = (&ra[c..c + WINDOW], &rb[c..c + WINDOW]);
            let mut s = [0.0; 5];
            for i in 0..WINDOW {
                let (x, y, ki) = (wa[i], wb[i], k[i]);
                s[0] += ki * x;
                s[1] += ki * y;
                s[2] += ki * (x * x);
                s[3] += ki * (y * y);
                s[4] += ki * (x * y);
            }
            for (t, v) in tmp.iter_mut().zip(s) {
                t.push(v);
            }
        }
    }
    tmp.map(|t| {
        let mut out = vec![0.0; ow * oh];
        for (r, acc) in out.chunks_exact_mut(ow).enumerate() {
            for (i, &ki) in k.iter().enumerate() {
                let src = &t[(r + i) * ow..(r + i + 1) * ow];
                for (o, v) in acc.iter_mut().zip(src) {
                    *o += ki * v;
                }
            }
        }
        out
    })
}

/// Masked means of the SSIM map and the contrast-structure map at one scale.
fn ssim_cs(a: &Plane, b: &Plane, c1: f64, c2: f64, k: &[f64; WINDOW]) -> (f64, f64) {
    let w = a.w;
    let [mu_a, mu_b, e_aa, e_bb, e_ab] = filter_moments(&a.v, &b.v, w, a.h, k);
    let ow = w + 1 - WINDOW;
    let half = WINDOW / 2;
    let (mut s_sum, mut cs_sum, mut n) = (0.0, 0.0, 0usize);
    let (mut s_all, mut cs_all) = (0.0, 0.0);
    for (i, ((((&ma, &mb), &xaa), &xbb), &xab)) in
        mu_a.iter().zip(&mu_b).zip(&e_aa).zip(&e_bb).zip(&e_ab).enumerate()
    {
        let var_a = xaa - ma * ma;
        let var_b = xbb - mb * mb;
        let cov = xab - ma * mb;
        let cs = (2.0 * cov + c2) / (var_a + var_b + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        let s = lum * cs;
        s_all += s;
        cs_all += cs;
        let (r, c) = (i / ow, i % ow);
        if a.m[(r + half) * w + c + half] {
            s_sum += s;
            cs_sum += cs;
            n += 1;
        }
    }
    if n == 0 {
        // No valid window center survived pooling; fall back to every window.
        let total = mu_a.len() as f64;
        (s_all / total, cs_all / total)
    } else {
        (s_sum / n as f64, cs_sum / n as f64)
    }
}

/// MS-SSIM of two depth maps over their jointly valid pixels, in `[0, 1]`.
pub fn msssim(a: &DepthMap, b: &DepthMap) -> Result<f64> {
    a.check_size(b)?;
    let av: Vec<f64> = a.values().iter().map(|&v| v as f64).collect();
    let bv: Vec<f64> = b.values().iter().map(|&v| v as f64).collect();
    msssim_masked(&av, a.valid_mask(), &bv, b.valid_mask(), a.width(), a.height())
}

/// [`msssim`] on raw row-major images with their own validity masks.
///
/// Values may be any finite numbers, which lets callers compare maps after
/// an affine normalization.
pub fn msssim_masked(
    a: &[f64],
    a_valid: &[bool],
    b: &[f64],
    b_valid: &[bool],
    w: usize,
    h: usize,
) -> Result<f64> {
    let len = w * h;
    if [a.len(), a_valid.len(), b.len(), b_valid.len()].iter().any(|&l| l != len) {
        return Err(Error::SizeMismatch(format!("MS-SSIM inputs are not all {w}x{h}")));
    }
    if w.min(h) < MIN_SIDE {
        return Err(Error::TooSmall(format!(
            "{w}x{h}; five scales need at least {MIN_SIDE} pixels per side"
        )));
    }
    let joint: Vec<bool> = a_valid.iter().zip(b_valid).map(|(x, y)| *x && *y).collect();
    let n = joint.iter().filter(|&&j| j).count();
    if n < MIN_VALID {
        return Err(Error::TooSmall(format!(
            "{n} jointly valid pixels, need {MIN_VALID}"
        )));
    }

    // Dynamic range over the union of valid pixels.
    let (lo, hi) = a
        .iter()
        .zip(a_valid)
        .chain(b.iter().zip(b_valid))
        .filter(|(_, &m)| m)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (&v, _)| {
            (lo.min(v), hi.max(v))
        });
    let mut range = hi - lo;
    if !(range > 1e-12) {
        range = 1.0;
    }
    let c1 = (K1 * range).powi(2);
    let c2 = (K2 * range).powi(2);

    let fill = |d: &[f64]| -> Plane {
        let mean = d
            .iter()
            .zip(&joint)
            .filter(|(_, &j)| j)
            .map(|(&v, _)| v)
            .sum::<f64>()
            / n as f64;
        Plane {
            w,
            h,
            v: d
                .iter()
                .zip(&joint)
                .map(|(&v, &j)| if j { v } else { mean })
                .collect(),
            m: joint.clone(),
        }
    };
    let mut pa = fill(a);
    let mut pb = fill(b);
    let k = gaussian_kernel();
    let mut score = 1.0;
    for (level, weight) in SCALE_WEIGHTS.iter().enumerate() {
        let (s, cs) = ssim_cs(&pa, &pb, c1, c2, &k);
        let term = if level + 1 == SCALE_WEIGHTS.len() { s } else { cs };
        score *= term.max(0.0).powf(*weight);
        if level + 1 < SCALE_WEIGHTS.len() {
            pa = pa.downsample();
            pb = pb.downsample();
        }
    }
    Ok(score.clamp(0.0, 1.0))
}

/// `1 - msssim(a, b)`.
pub fn render_loss(a: &DepthMap, b: &DepthMap) -> Result<f64> {
    Ok(1.0 - msssim(a, b)?)
}
