//! Geodesic unfolding on the surface and self-intersection counting.

mod kernel;
mod operator;

pub use kernel::{
    chain_frames, intersection_kernel, kernel_row_integral, localized_count, row_integral_closed_form, BumpFunction,
    CrossingIntensity, KernelContext, Profile, RowIntegral,
};
pub use operator::{discretized_markov_operator, GridSpec, SpectralReport};

use crate::error::{Error, Result};
use crate::hypgeo::{line_meet, DiskPoint, GeodesicSegment, Isometry, LineMeet, UnitTangent, TAU_ANGLE, TAU_END};
use crate::surface::{GroupWord, Surface, PAIR};
use num_complex::Complex64 as Complex;
use rand::Rng;
use serde::Serialize;
use std::f64::consts::{PI, TAU};

/// Frames whose determinant drifts further than this are rejected.
pub const FRAME_DRIFT_TOL: f64 = 1e-7;
/// Look-ahead used to decide which tile a boundary point is entering.
const LOOK_AHEAD: f64 = 1e-7;
/// Parameter slack when testing crossings near piece endpoints.
const END_SLACK: f64 = 1e-9;
/// Two crossings closer than this in both arc times are the same crossing.
const DEDUP_TOL: f64 = 1e-7;

/// A geodesic arc unfolded into pieces inside the closed polygon.
#[derive(Debug, Clone, Serialize)]
pub struct SegmentChain {
    pub pieces: Vec<GeodesicSegment>,
    /// `transforms[i]` carries the exit frame of piece `i` to the entry frame of piece `i+1`.
    pub transforms: Vec<Isometry>,
    /// Group words of `transforms`.
    pub transform_words: Vec<GroupWord>,
    /// Arc time at which each piece starts.
    pub starts: Vec<f64>,
    pub total_length: f64,
}

impl SegmentChain {
    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    /// Unit tangent (in the polygon) at arc time `t`.
    pub fn tangent_at(&self, t: f64) -> UnitTangent {
        let i = match self.starts.partition_point(|&s| s <= t) {
            0 => 0,
            k => k - 1,
        };
        let p = &self.pieces[i];
        UnitTangent::from_frame(&p.frame().compose(&Isometry::translation(t - self.starts[i])))
    }
}

/// Draws a unit tangent from the normalized Liouville measure, based in the polygon.
pub fn sample_liouville<R: Rng + ?Sized>(rng: &mut R, s: &Surface) -> UnitTangent {
    let rmax = (s.circumradius / 2.0).tanh();
    let peak = (2.0 / (1.0 - rmax * rmax)).powi(2);
    loop {
        let z = Complex::new(rng.random_range(-rmax..rmax), rng.random_range(-rmax..rmax));
        let r2 = z.norm_sqr();
        if r2 >= 1.0 {
            continue;
        }
        let dens = (2.0 / (1.0 - r2)).powi(2);
        if rng.random::<f64>() * peak < dens && s.contains(z) {
            return UnitTangent::new(DiskPoint { z }, rng.random::<f64>() * TAU);
        }
    }
}

/// First time the ray from `frame` leaves the polygon, and the side it leaves through.
pub(crate) fn exit_time(frame: &Isometry, s: &Surface) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for i in 0..8 {
        if let LineMeet::Cross { t2, dir, .. } = line_meet(s.side_frame(i), frame) {
            // The polygon is to the left of side frames: exiting means heading right.
            if dir < 0.0 && dir > -PI && t2 > 0.0 && best.is_none_or(|(b, _)| t2 < b) {
                best = Some((t2, i));
            }
        }
    }
    best
}

/// If the geodesic is not entering the polygon at `frame`, re-express it in
/// the tile it is entering.
pub(crate) fn settle(frame: Isometry, s: &Surface) -> Result<(Isometry, Option<(Isometry, GroupWord)>)> {
    let ahead = frame.map(Complex::new((LOOK_AHEAD / 2.0).tanh(), 0.0));
    if s.contains(ahead) {
        return Ok((frame, None));
    }
    let (_, g, w) = s.reduce_z(ahead)?;
    Ok((g.compose(&frame), Some((g, w))))
}

/// Frame after leaving through `side` at time `t`, re-entered into the polygon,
/// with the applied transform and its word.
pub(crate) fn cross_side(
    frame: &Isometry,
    t: f64,
    side: usize,
    s: &Surface,
) -> Result<(Isometry, Isometry, GroupWord)> {
    let g = s.pairings[PAIR[side]];
    let moved = g.compose(&frame.compose(&Isometry::translation(t)));
    let (next, extra) = settle(check_frame(&moved)?, s)?;
    let letter = GroupWord::from_letters([PAIR[side] as u8]);
    Ok(match extra {
        Some((h, w)) => {
            // A vertex passage: the raw word depends on which side was hit first.
            let total = h.compose(&g);
            let w = s.corner_word(&total).cloned().unwrap_or_else(|| w.mul(&letter));
            (next, total, w)
        }
        None => (next, g, letter),
    })
}

fn check_frame(f: &Isometry) -> Result<Isometry> {
    let drift = (f.det() - 1.0).abs();
    if drift > FRAME_DRIFT_TOL || !drift.is_finite() {
        return Err(Error::NumericDrift(drift));
    }
    Ok(f.renormalized())
}

/// Unfolds `γ[0, T]` from `u` into polygon pieces.
pub fn trace_geodesic(u: &UnitTangent, t_total: f64, s: &Surface) -> Result<SegmentChain> {
    if !(t_total > 0.0) || !t_total.is_finite() {
        return Err(Error::DegenerateInput(format!("trace length {t_total}")));
    }
    if !s.contains(u.base.z) {
        return Err(Error::Domain(u.base.z.norm()));
    }
    let (mut frame, _) = settle(u.frame(), s)?;
    let mut pieces = Vec::new();
    let mut transforms = Vec::new();
    let mut transform_words = Vec::new();
    let mut starts = Vec::new();
    let mut elapsed = 0.0;
    loop {
        let remaining = t_total - elapsed;
        let (t_exit, side) = exit_time(&frame, s).ok_or_else(|| Error::NumericDrift(f64::NAN))?;
        starts.push(elapsed);
        if t_exit >= remaining {
            pieces.push(GeodesicSegment::from_frame(frame, remaining));
            break;
        }
        pieces.push(GeodesicSegment::from_frame(frame, t_exit));
        elapsed += t_exit;
        let (next, g, w) = cross_side(&frame, t_exit, side, s)?;
        transforms.push(g);
        transform_words.push(w);
        frame = next;
    }
    Ok(SegmentChain { pieces, transforms, transform_words, starts, total_length: t_total })
}

/// One transversal crossing, located in the polygon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntersectionPoint {
    pub point: DiskPoint,
    pub angle: f64,
    /// Arc times of the two strands, smaller first for self-crossings.
    pub times: (f64, f64),
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IntersectionRecord {
    pub count: usize,
    pub points: Vec<IntersectionPoint>,
    /// Crossings rejected as tangential.
    pub degenerate_count: usize,
}

/// How arc times are interpreted when de-duplicating crossings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeDomain {
    /// Half-open interval `[0, T)`.
    Open(f64),
    /// Circle of the given period.
    Periodic(f64),
}

impl TimeDomain {
    fn normalize(self, t: f64) -> Option<f64> {
        match self {
            TimeDomain::Open(len) => {
                let t = t.max(0.0);
                (t < len - TAU_END).then_some(t)
            }
            TimeDomain::Periodic(p) => {
                let r = t.rem_euclid(p);
                Some(if p - r < DEDUP_TOL { r - p } else { r })
            }
        }
    }
}

/// Uniform grid over the disk bounding square used to prune pair tests.
struct SpatialHash {
    cell: f64,
    n: usize,
    cells: Vec<Vec<u32>>,
}

impl SpatialHash {
    fn new(cell: f64) -> Self {
        let n = (2.0 / cell).ceil() as usize;
        Self { cell, n, cells: vec![Vec::new(); n * n] }
    }

    fn idx(&self, x: f64) -> usize {
        (((x + 1.0) / self.cell).floor().max(0.0) as usize).min(self.n - 1)
    }

    /// Cells touched by a piece, from a polyline with Euclidean step below half a cell.
    fn cells_of(&self, p: &GeodesicSegment) -> Vec<usize> {
        // Euclidean speed is at most (1 − |z|²)/2 ≤ 1/2 per unit length.
        let steps = ((p.length * 0.5) / (0.5 * self.cell)).ceil().max(1.0) as usize;
        let margin = 1e-6;
        let mut out = Vec::new();
        let mut prev = p.point_at(0.0);
        for k in 1..=steps {
            let cur = p.point_at(p.length * k as f64 / steps as f64);
            let (x0, x1) = (prev.re.min(cur.re) - margin, prev.re.max(cur.re) + margin);
            let (y0, y1) = (prev.im.min(cur.im) - margin, prev.im.max(cur.im) + margin);
            // Geodesic arcs bow slightly off the chord; pad by one step length.
            let pad = 0.5 * self.cell;
            for ix in self.idx(x0 - pad)..=self.idx(x1 + pad) {
                for iy in self.idx(y0 - pad)..=self.idx(y1 + pad) {
                    out.push(ix * self.n + iy);
                }
            }
            prev = cur;
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Candidate pairs `(i, j)` with `i` in `a` and `j` in `b` (or `i < j` when `b` is `None`).
fn candidate_pairs(a: &[GeodesicSegment], b: Option<&[GeodesicSegment]>, use_hash: bool) -> Vec<(u32, u32)> {
    let nb = b.map_or(a.len(), |b| b.len());
    if !use_hash {
        let mut out = Vec::new();
        for i in 0..a.len() {
            let lo = if b.is_none() { i + 1 } else { 0 };
            for j in lo..nb {
                out.push((i as u32, j as u32));
            }
        }
        return out;
    }
    let mut hash = SpatialHash::new(0.05);
    let other = b.unwrap_or(a);
    for (j, p) in other.iter().enumerate() {
        for c in hash.cells_of(p) {
            hash.cells[c].push(j as u32);
        }
    }
    let mut stamp = vec![u32::MAX; nb];
    let mut out = Vec::new();
    for (i, p) in a.iter().enumerate() {
        for c in hash.cells_of(p) {
            for &j in &hash.cells[c] {
                let ok = if b.is_none() { j as usize > i } else { true };
                if ok && stamp[j as usize] != i as u32 {
                    stamp[j as usize] = i as u32;
                    out.push((i as u32, j));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

/// Accumulates crossings keyed by arc-time pairs, merging duplicates.
struct CrossingSet {
    dom_a: TimeDomain,
    dom_b: TimeDomain,
    symmetric: bool,
    found: Vec<IntersectionPoint>,
    degenerate: usize,
}

impl CrossingSet {
    fn offer(&mut self, p: &GeodesicSegment, start_p: f64, q: &GeodesicSegment, start_q: f64, qmap: Option<&Isometry>) {
        let qf = match qmap {
            Some(g) => g.compose(q.frame()),
            None => *q.frame(),
        };
        let LineMeet::Cross { t1, t2, angle, .. } = line_meet(p.frame(), &qf) else {
            return;
        };
        if t1 < -END_SLACK || t1 > p.length + END_SLACK || t2 < -END_SLACK || t2 > q.length + END_SLACK {
            return;
        }
        let (Some(sa), Some(sb)) = (
            self.dom_a.normalize(start_p + t1.clamp(0.0, p.length)),
            self.dom_b.normalize(start_q + t2.clamp(0.0, q.length)),
        ) else {
            return;
        };
        if self.symmetric && (sa - sb).abs() < DEDUP_TOL {
            return;
        }
        if angle < TAU_ANGLE || angle > PI - TAU_ANGLE {
            self.degenerate += 1;
            return;
        }
        let times = if self.symmetric && sb < sa { (sb, sa) } else { (sa, sb) };
        self.found.push(IntersectionPoint { point: DiskPoint { z: p.point_at(t1) }, angle, times });
    }

    fn finish(mut self) -> IntersectionRecord {
        self.found.sort_by(|x, y| x.times.0.total_cmp(&y.times.0).then(x.times.1.total_cmp(&y.times.1)));
        let mut out: Vec<IntersectionPoint> = Vec::with_capacity(self.found.len());
        for c in self.found {
            let dup = out
                .iter()
                .rev()
                .take_while(|o| c.times.0 - o.times.0 < DEDUP_TOL)
                .any(|o| (c.times.1 - o.times.1).abs() < DEDUP_TOL);
            if !dup {
                out.push(c);
            }
        }
        IntersectionRecord { count: out.len(), points: out, degenerate_count: self.degenerate }
    }
}

/// Pieces with an endpoint at a polygon vertex, with that vertex index.
fn vertex_pieces(c: &SegmentChain, s: &Surface) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for (i, p) in c.pieces.iter().enumerate() {
        for z in [p.start_point(), p.end_point()] {
            if let Some(v) = s.vertex_near(z, 1e-7) {
                out.push((i, v));
            }
        }
    }
    out
}

fn crossings_impl(
    a: &SegmentChain,
    dom_a: TimeDomain,
    b: Option<(&SegmentChain, TimeDomain)>,
    s: &Surface,
    use_hash: bool,
) -> IntersectionRecord {
    let (bc, dom_b) = match b {
        Some((c, d)) => (c, d),
        None => (a, dom_a),
    };
    let mut set = CrossingSet { dom_a, dom_b, symmetric: b.is_none(), found: Vec::new(), degenerate: 0 };
    for (i, j) in candidate_pairs(&a.pieces, b.map(|(c, _)| c.pieces.as_slice()), use_hash) {
        let (i, j) = (i as usize, j as usize);
        set.offer(&a.pieces[i], a.starts[i], &bc.pieces[j], bc.starts[j], None);
    }
    // Crossings exactly at the vertex are only visible across corner tiles.
    let va = vertex_pieces(a, s);
    let vb = if b.is_some() { vertex_pieces(bc, s) } else { va.clone() };
    for &(i, via) in &va {
        for &(j, vjb) in &vb {
            if via == vjb && i == j && b.is_none() {
                continue;
            }
            let g = s.corner_map(vjb, via);
            let before = set.found.len();
            set.offer(&a.pieces[i], a.starts[i], &bc.pieces[j], bc.starts[j], Some(g));
            if set.found.len() > before {
                let z = set.found.last().unwrap().point.z;
                if s.vertex_near(z, 1e-6).is_none() {
                    set.found.pop();
                }
            }
        }
    }
    set.finish()
}

/// Transversal self-crossings of an open chain `γ[0, T)`.
pub fn count_self_intersections(c: &SegmentChain, s: &Surface) -> IntersectionRecord {
    crossings_impl(c, TimeDomain::Open(c.total_length), None, s, true)
}

/// All-pairs reference for [`count_self_intersections`].
pub fn count_self_intersections_all_pairs(c: &SegmentChain, s: &Surface) -> IntersectionRecord {
    crossings_impl(c, TimeDomain::Open(c.total_length), None, s, false)
}

/// Self-crossings of a chain read with the given time convention.
pub fn self_crossings(c: &SegmentChain, dom: TimeDomain, s: &Surface) -> IntersectionRecord {
    crossings_impl(c, dom, None, s, true)
}

/// Crossings between two distinct chains.
pub fn mutual_crossings(
    a: &SegmentChain,
    dom_a: TimeDomain,
    b: &SegmentChain,
    dom_b: TimeDomain,
    s: &Surface,
) -> IntersectionRecord {
    crossings_impl(a, dom_a, Some((b, dom_b)), s, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hypgeo::{hyp_distance_z, segment_cross};
    use crate::rng::stream;
    use crate::surface::build_genus2_surface;
    use std::sync::OnceLock;

    pub(crate) fn surface() -> &'static Surface {
        static S: OnceLock<Surface> = OnceLock::new();
        S.get_or_init(|| build_genus2_surface().unwrap())
    }

    #[test]
    fn short_trace_is_one_piece() {
        let s = surface();
        let c = trace_geodesic(&UnitTangent::new(DiskPoint::ORIGIN, 0.3), 0.1, s).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c.transforms.is_empty());
    }

    #[test]
    fn chain_structure() {
        let s = surface();
        let mut r = stream(21, 0, 0);
        for _ in 0..100 {
            let u = sample_liouville(&mut r, s);
            let c = trace_geodesic(&u, 50.0, s).unwrap();
            let total: f64 = c.pieces.iter().map(|p| p.length).sum();
            assert!((total - 50.0).abs() < 1e-8);
            for (k, p) in c.pieces.iter().enumerate() {
                assert!(s.contains(p.start_point()));
                let end = p.end_point();
                if k + 1 < c.len() {
                    assert!(s.worst_side(end, 1e-9).is_none());
                    assert!((0..8).any(|i| s.side_violation(end, i).abs() < 1e-9));
                    let moved = c.transforms[k].map(end);
                    assert!(hyp_distance_z(moved, c.pieces[k + 1].start_point()) < 1e-9);
                    assert!(s.word_isometry(&c.transform_words[k]).distance_to(&c.transforms[k]) < 1e-12);
                }
            }
        }
    }

    #[test]
    fn prefix_property() {
        let s = surface();
        let mut r = stream(22, 0, 0);
        for _ in 0..20 {
            let u = sample_liouville(&mut r, s);
            let a = trace_geodesic(&u, 30.0, s).unwrap();
            let b = trace_geodesic(&u, 60.0, s).unwrap();
            for k in 0..a.len() - 1 {
                assert_eq!(a.pieces[k], b.pieces[k]);
            }
            let k = a.len() - 1;
            assert!(hyp_distance_z(a.pieces[k].start_point(), b.pieces[k].start_point()) < 1e-8);
            assert!(a.pieces[k].length <= b.pieces[k].length + 1e-12);
        }
    }

    #[test]
    fn rejects_base_outside_polygon() {
        let s = surface();
        let u = UnitTangent::new(DiskPoint::from_xy(0.95, 0.0).unwrap(), 0.0);
        assert!(trace_geodesic(&u, 1.0, s).is_err());
    }

    #[test]
    fn short_arcs_do_not_cross() {
        let s = surface();
        let mut r = stream(23, 0, 0);
        for _ in 0..200 {
            let u = sample_liouville(&mut r, s);
            let c = trace_geodesic(&u, 0.2, s).unwrap();
            assert_eq!(count_self_intersections(&c, s).count, 0);
        }
    }

    #[test]
    fn hash_matches_all_pairs_and_counts_grow() {
        let s = surface();
        let mut r = stream(24, 0, 0);
        for _ in 0..30 {
            let u = sample_liouville(&mut r, s);
            let c = trace_geodesic(&u, 50.0, s).unwrap();
            let h = count_self_intersections(&c, s);
            let a = count_self_intersections_all_pairs(&c, s);
            assert_eq!(h.count, a.count);
            assert_eq!(h.degenerate_count, 0);
            let mut prev = 0;
            for t in [10.0, 20.0, 35.0, 50.0] {
                let n = count_self_intersections(&trace_geodesic(&u, t, s).unwrap(), s).count;
                assert!(n >= prev);
                prev = n;
            }
        }
    }

    /// Independent count: lift pieces into the plane and test against every
    /// neighbour translate, keeping crossings whose point lies in the polygon.
    fn count_by_lifting(c: &SegmentChain, s: &Surface) -> usize {
        let mut times = Vec::new();
        for (i, p) in c.pieces.iter().enumerate() {
            for (j, q) in c.pieces.iter().enumerate() {
                for (_, g) in &s.neighbor_set {
                    let gq = q.transformed(g);
                    let x = segment_cross(p, &gq);
                    if let (true, Some((t1, t2))) = (x.crossed, x.params) {
                        let z = p.point_at(t1);
                        let (a, b) = (c.starts[i] + t1, c.starts[j] + t2);
                        if s.contains(z) && (a - b).abs() > 1e-7 {
                            times.push((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
        times.sort_by(|x, y| x.partial_cmp(y).unwrap());
        times.dedup_by(|x, y| (x.0 - y.0).abs() < 1e-7 && (x.1 - y.1).abs() < 1e-7);
        times.len()
    }

    #[test]
    fn counts_match_lifting_oracle() {
        let s = surface();
        let mut r = stream(25, 0, 0);
        for _ in 0..20 {
            let u = sample_liouville(&mut r, s);
            let c = trace_geodesic(&u, 25.0, s).unwrap();
            assert_eq!(count_self_intersections(&c, s).count, count_by_lifting(&c, s));
        }
    }
}
