//! Brute-force oracles that share no code with the crossing logic under test.
#![allow(dead_code)]

use geolab::hypgeo::{GeodesicSegment, Isometry};
use geolab::surface::Surface;
use num_complex::Complex64 as Complex;

type P = (f64, f64);

/// Euclidean polyline through points of `seg` spaced `step` apart in arc length.
pub fn sample_segment(seg: &GeodesicSegment, step: f64) -> Vec<P> {
    let n = (seg.length / step).ceil().max(1.0) as usize;
    (0..=n)
        .map(|k| {
            let z = seg.point_at(seg.length * k as f64 / n as f64);
            (z.re, z.im)
        })
        .collect()
}

fn cross2(o: P, a: P, b: P) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Parameters `(s, t)` in `[0, 1]²` where segments `p0p1` and `q0q1` meet properly.
fn seg_seg(p0: P, p1: P, q0: P, q1: P) -> Option<(f64, f64)> {
    let d1 = cross2(q0, q1, p0);
    let d2 = cross2(q0, q1, p1);
    let d3 = cross2(p0, p1, q0);
    let d4 = cross2(p0, p1, q1);
    if (d1 > 0.0) == (d2 > 0.0) || (d3 > 0.0) == (d4 > 0.0) || d1 == d2 || d3 == d4 {
        return None;
    }
    Some((d1 / (d1 - d2), d3 / (d3 - d4)))
}

struct Chunk {
    lo: usize,
    hi: usize,
    bbox: (f64, f64, f64, f64),
}

fn chunks(p: &[P], size: usize) -> Vec<Chunk> {
    let mut out = Vec::new();
    let mut lo = 0;
    while lo + 1 < p.len() {
        let hi = (lo + size).min(p.len() - 1);
        let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for q in &p[lo..=hi] {
            b = (b.0.min(q.0), b.1.max(q.0), b.2.min(q.1), b.3.max(q.1));
        }
        out.push(Chunk { lo, hi, bbox: b });
        lo = hi;
    }
    out
}

/// Proper crossings of two polylines, as fractional vertex indices.
pub fn polyline_crossings(a: &[P], b: &[P]) -> Vec<(f64, f64)> {
    let (ca, cb) = (chunks(a, 64), chunks(b, 64));
    let mut out = Vec::new();
    for x in &ca {
        for y in &cb {
            if x.bbox.1 < y.bbox.0 || y.bbox.1 < x.bbox.0 || x.bbox.3 < y.bbox.2 || y.bbox.3 < x.bbox.2 {
                continue;
            }
            for i in x.lo..x.hi {
                for j in y.lo..y.hi {
                    if let Some((s, t)) = seg_seg(a[i], a[i + 1], b[j], b[j + 1]) {
                        out.push((i as f64 + s, j as f64 + t));
                    }
                }
            }
        }
    }
    out
}

/// Dense-sampling verdict for two geodesic segments: crossing parameters, if any.
/// Also returns the number of polyline crossings, which must be at most one.
pub fn oracle_segment_cross(s1: &GeodesicSegment, s2: &GeodesicSegment, step: f64) -> (Option<(f64, f64)>, usize) {
    let a = sample_segment(s1, step);
    let b = sample_segment(s2, step);
    let hits = polyline_crossings(&a, &b);
    let first =
        hits.first().map(|&(i, j)| (s1.length * i / (a.len() - 1) as f64, s2.length * j / (b.len() - 1) as f64));
    (first, hits.len())
}

/// Self-crossings of one period of a closed geodesic by dense sampling of its
/// axis in the disk, folding each sample into the polygon independently.
///
/// Consecutive samples folded by the same element form a run inside one tile;
/// each run is extended by one sample on both sides so crossings in the gaps
/// at the boundary are seen, and a crossing is kept only if it lies in the
/// polygon (up to interpolation error). Geodesics through a vertex are not supported.
pub fn oracle_closed_self_crossings(g: &Isometry, s: &Surface, step: f64) -> usize {
    oracle_closed_points(g, s, step).len()
}

pub fn oracle_closed_points(g: &Isometry, s: &Surface, step: f64) -> Vec<Complex> {
    let (att, rep) = g.fixed_points().unwrap();
    let axis = geolab::hypgeo::tangent_on_line(rep, att).frame();
    let len = g.translation_length();
    let n = (len / step).ceil() as usize;
    let h_step = len / n as f64;
    // Samples at k·h for k = -1..=n+1; the runs at either end are the two
    // halves of one chord, so they are never paired.
    let pts: Vec<Complex> = (0..n + 3)
        .map(|k| {
            let t = (k as f64 - 1.0) * h_step;
            let x = (t / 2.0).tanh();
            axis.map(Complex::new(x, 0.0))
        })
        .collect();
    let folded: Vec<(Complex, Isometry)> = pts
        .iter()
        .map(|&z| {
            let (q, h, _) = s.reduce_z(z).unwrap();
            (q, h)
        })
        .collect();
    let same = |x: &Isometry, y: &Isometry| x.distance_to(y) < 1e-6;
    let mut runs: Vec<Vec<P>> = Vec::new();
    let mut k = 1;
    while k <= n + 1 {
        let h = folded[k].1;
        let z = h.map(pts[k - 1]);
        let mut run = vec![(z.re, z.im)];
        let mut m = k;
        while m <= n + 1 && same(&folded[m].1, &h) {
            run.push((folded[m].0.re, folded[m].0.im));
            m += 1;
        }
        let z = h.map(pts[m]);
        run.push((z.re, z.im));
        runs.push(run);
        k = m;
    }
    let last = runs.len() - 1;
    let mut found: Vec<Complex> = Vec::new();
    for i in 0..runs.len() {
        for j in i + 1..runs.len() {
            if i == 0 && j == last {
                continue;
            }
            for (u, _) in polyline_crossings(&runs[i], &runs[j]) {
                let a = u.floor() as usize;
                let f = u - a as f64;
                let p0 = runs[i][a];
                let p1 = runs[i][(a + 1).min(runs[i].len() - 1)];
                let z = Complex::new(p0.0 + f * (p1.0 - p0.0), p0.1 + f * (p1.1 - p0.1));
                // Crossings on a side appear once from each adjacent tile.
                let inside = s.worst_side(z, 1e-7).is_none();
                let seen = found.iter().any(|&w| s.neighbor_set.iter().any(|(_, g)| (g.map(w) - z).norm() < 1e-6));
                if inside && !seen {
                    found.push(z);
                }
            }
        }
    }
    found
}
