//! Closed geodesics up to a length bound: census, self and mutual crossing
//! numbers, crossings with a fixed segment, and banded fluctuation summaries.

use crate::error::{Error, Result};
use crate::hypgeo::{tangent_on_line, BoundaryPoint, GeodesicSegment, Isometry, UnitTangent};
use crate::surface::{GroupWord, Surface};
use crate::tracer::{
    cross_side, exit_time, mutual_crossings, self_crossings, settle, trace_geodesic, IntersectionRecord, SegmentChain,
    TimeDomain,
};
use num_complex::Complex64 as Complex;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;
use std::f64::consts::PI;

/// Default cap on the census length bound.
pub const L_MAX_CAP: f64 = 7.0;
/// Default cap on the number of census entries.
pub const ENTRY_CAP: usize = 200_000;
/// Largest admissible closing error of a traced period.
pub const CLOSURE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Serialize)]
pub struct ClosedGeodesic {
    /// Canonical cyclic word (least over rotations and inversion).
    pub word: GroupWord,
    pub length: f64,
    /// `|trace|` of the SU(1,1) representative.
    pub trace: f64,
    /// One period, starting where the geodesic enters the polygon.
    pub chain: SegmentChain,
    pub n_self: usize,
    pub degenerate: usize,
    pub prime: bool,
    /// Distance between the start frame and the frame reached after one period.
    pub closure_residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeodesicCensus {
    pub l_max: f64,
    pub entries: Vec<ClosedGeodesic>,
    pub candidates_examined: usize,
    pub non_prime_discarded: usize,
}

impl GeodesicCensus {
    /// Number of entries with length at most `l`.
    pub fn count_up_to(&self, l: f64) -> usize {
        self.entries.iter().filter(|e| e.length <= l).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CensusConfig {
    pub l_max_cap: f64,
    pub entry_cap: usize,
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self { l_max_cap: L_MAX_CAP, entry_cap: ENTRY_CAP }
    }
}

/// Moves `frame` to the foot of its base point on the axis of `g`, pointing
/// in the translation direction. Keeps long periods from drifting off the axis.
fn project_to_axis(frame: &Isometry, (att, rep): (BoundaryPoint, BoundaryPoint)) -> Isometry {
    let axis = tangent_on_line(rep, att).frame();
    let w = axis.inverse().map(frame.map(Complex::new(0.0, 0.0)));
    // Foot of the perpendicular from w to the real diameter.
    let q = 1.0 + w.norm_sqr();
    let x = 2.0 * w.re / (q + (q * q - 4.0 * w.re * w.re).max(0.0).sqrt());
    axis.compose(&Isometry::translation(2.0 * x.atanh()))
}

/// Traces one period of the axis of a hyperbolic element, starting at a
/// boundary entry point so every piece is a whole chord of the polygon.
/// Returns the chain, the cutting word, and the closing residual.
///
/// Tile coordinates along a geodesic amplify the axis error by `e^t`, so the
/// residual grows like `e^ℓ` machine epsilons; periods up to about 15 close
/// within [`CLOSURE_TOL`].
pub fn trace_closed(g: &Isometry, s: &Surface) -> Result<(SegmentChain, GroupWord, f64)> {
    let (att, rep) = g.fixed_points()?;
    let length = g.translation_length();
    let (u, mut h) = s.reduce_tangent(&tangent_on_line(rep, att))?;
    let (f0, extra) = settle(u.frame(), s)?;
    if let Some((e, _)) = extra {
        h = e.compose(&h);
    }
    // The axis is carried as its endpoints, moved by one bounded side pairing
    // at a time; conjugates of `g` itself have coefficients of size e^(ℓ/2).
    let push = |step: &Isometry, (a, r): (BoundaryPoint, BoundaryPoint)| {
        (BoundaryPoint::from_complex(step.map(a.to_complex())), BoundaryPoint::from_complex(step.map(r.to_complex())))
    };
    let mut current = push(&h, (att, rep));
    let (t, side) = exit_time(&f0, s).ok_or(Error::NumericDrift(f64::NAN))?;
    let (mut frame, step, _) = cross_side(&f0, t, side, s)?;
    current = push(&step, current);
    frame = project_to_axis(&frame, current);
    let first = frame;
    let mut pieces = Vec::new();
    let mut transforms = Vec::new();
    let mut words = Vec::new();
    let mut starts = Vec::new();
    let mut elapsed = 0.0;
    while elapsed < length - 1e-9 {
        if pieces.len() > 100_000 {
            return Err(Error::NonTermination(pieces.len()));
        }
        let (t, side) = exit_time(&frame, s).ok_or(Error::NumericDrift(f64::NAN))?;
        starts.push(elapsed);
        pieces.push(GeodesicSegment::from_frame(frame, t));
        elapsed += t;
        let (next, step, w) = cross_side(&frame, t, side, s)?;
        current = push(&step, current);
        transforms.push(step);
        words.push(w);
        frame = project_to_axis(&next, current);
    }
    if (elapsed - length).abs() > 1e-6 {
        return Err(Error::NumericDrift(elapsed - length));
    }
    let residual = frame.distance_to(&first);
    let letters = words.iter().flat_map(|w| w.inverse().letters).collect::<Vec<_>>();
    let word = GroupWord::from_letters(letters).cyclically_reduced();
    transforms.pop();
    words.pop();
    let chain = SegmentChain { pieces, transforms, transform_words: words, starts, total_length: elapsed };
    Ok((chain, word, residual))
}

/// Chord signature: midpoint and undirected direction.
fn chord_key(p: &GeodesicSegment) -> (Complex, f64) {
    let m = p.frame().compose(&Isometry::translation(p.length / 2.0));
    let u = UnitTangent::from_frame(&m);
    (u.base.z, u.direction.rem_euclid(PI))
}

fn same_chord(a: (Complex, f64), b: (Complex, f64)) -> bool {
    let d = (a.1 - b.1).abs();
    (a.0 - b.0).norm() < 1e-7 && d.min(PI - d) < 1e-6
}

fn build(g: &Isometry, s: &Surface, with_count: bool) -> Result<ClosedGeodesic> {
    let (chain, cut, residual) = trace_closed(g, s)?;
    if residual > CLOSURE_TOL {
        return Err(Error::NumericDrift(residual));
    }
    let keys: Vec<_> = chain.pieces.iter().map(chord_key).collect();
    let repeats = keys.iter().skip(1).any(|&k| same_chord(k, keys[0]));
    let prime = !repeats && !cut.is_proper_power();
    let (n_self, degenerate) = if with_count {
        let rec = self_crossings(&chain, TimeDomain::Periodic(chain.total_length), s);
        (rec.count, rec.degenerate_count)
    } else {
        (0, 0)
    };
    Ok(ClosedGeodesic {
        word: cut.canonical(),
        length: g.translation_length(),
        trace: g.trace().abs(),
        chain,
        n_self,
        degenerate,
        prime,
        closure_residual: residual,
    })
}

/// Closed geodesic in the free homotopy class of `w`.
pub fn closed_geodesic_from_word(w: &GroupWord, s: &Surface) -> Result<ClosedGeodesic> {
    let w = w.cyclically_reduced();
    if w.is_empty() {
        return Err(Error::NotHyperbolic(2.0));
    }
    let g = s.word_isometry(&w);
    if !g.is_hyperbolic() {
        return Err(Error::NotHyperbolic(g.trace().abs()));
    }
    build(&g, s, true)
}

/// All prime closed geodesics (unoriented) with length at most `l_max`.
///
/// Every class has a representative whose axis meets the polygon, hence one
/// with `d(0, g·0) ≤ ℓ + 2·circumradius`; those elements are enumerated by tile
/// adjacency and de-duplicated by the chords their period cuts in the polygon.
pub fn enumerate_closed_geodesics(l_max: f64, s: &Surface, cfg: &CensusConfig) -> Result<GeodesicCensus> {
    if !(l_max > 0.0) || l_max > cfg.l_max_cap {
        return Err(Error::BudgetExceeded(format!("L_max {l_max} above cap {}", cfg.l_max_cap)));
    }
    let candidates: Vec<Isometry> = s
        .ball(l_max + 2.0 * s.circumradius + 1e-9)
        .into_iter()
        .map(|(_, g)| g)
        .filter(|g| g.is_hyperbolic() && g.translation_length() <= l_max + 1e-12)
        .collect();
    let built: Vec<ClosedGeodesic> = candidates.par_iter().map(|g| build(g, s, false)).collect::<Result<_>>()?;
    // Only prime geodesics are indexed, and a chord determines its geodesic,
    // so any chord match is the same unoriented class.
    let mut index: HashMap<(i64, i64), Vec<(Complex, f64)>> = HashMap::new();
    let cell = |z: Complex| ((z.re * 1e6).floor() as i64, (z.im * 1e6).floor() as i64);
    let mut accepted: Vec<ClosedGeodesic> = Vec::new();
    let mut non_prime = 0usize;
    for c in built {
        if !c.prime {
            non_prime += 1;
            continue;
        }
        let key = chord_key(&c.chain.pieces[0]);
        let (cx, cy) = cell(key.0);
        let seen = (-1..=1)
            .flat_map(|dx| (-1..=1).map(move |dy| (cx + dx, cy + dy)))
            .any(|k| index.get(&k).is_some_and(|v| v.iter().any(|&o| same_chord(o, key))));
        if seen {
            continue;
        }
        if accepted.len() >= cfg.entry_cap {
            return Err(Error::BudgetExceeded(format!("more than {} census entries", cfg.entry_cap)));
        }
        for p in &c.chain.pieces {
            let k = chord_key(p);
            index.entry(cell(k.0)).or_default().push(k);
        }
        accepted.push(c);
    }
    let candidates_examined = candidates.len();
    accepted.par_iter_mut().for_each(|e| {
        let rec = self_crossings(&e.chain, TimeDomain::Periodic(e.chain.total_length), s);
        e.n_self = rec.count;
        e.degenerate = rec.degenerate_count;
    });
    accepted.sort_by(|a, b| a.length.total_cmp(&b.length).then_with(|| a.word.cmp(&b.word)));
    Ok(GeodesicCensus { l_max, entries: accepted, candidates_examined, non_prime_discarded: non_prime })
}

/// Self-crossings over one period.
pub fn closed_self_intersections(g: &ClosedGeodesic, s: &Surface) -> IntersectionRecord {
    self_crossings(&g.chain, TimeDomain::Periodic(g.chain.total_length), s)
}

/// Crossings between two closed geodesics; the self count when they coincide.
pub fn pair_intersections(g1: &ClosedGeodesic, g2: &ClosedGeodesic, s: &Surface) -> usize {
    if g1.word == g2.word && (g1.length - g2.length).abs() < 1e-9 {
        return closed_self_intersections(g1, s).count;
    }
    let d1 = TimeDomain::Periodic(g1.chain.total_length);
    let d2 = TimeDomain::Periodic(g2.chain.total_length);
    mutual_crossings(&g1.chain, d1, &g2.chain, d2, s).count
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedSegmentCrossing {
    pub count: usize,
    /// `count / (|α| · length(β))`.
    pub rate: f64,
}

/// Crossings of a chain `β` (closed or open) with the surface projection of `α`.
pub fn crossing_with_fixed_segment(
    beta: &SegmentChain,
    beta_domain: TimeDomain,
    alpha: &GeodesicSegment,
    s: &Surface,
) -> Result<FixedSegmentCrossing> {
    let (start, _) = s.reduce_tangent(&alpha.start)?;
    let a = trace_geodesic(&start, alpha.length, s)?;
    let count = mutual_crossings(beta, beta_domain, &a, TimeDomain::Open(alpha.length), s).count;
    Ok(FixedSegmentCrossing { count, rate: count as f64 / (alpha.length * beta.total_length) })
}

#[derive(Debug, Clone, Serialize)]
pub struct BandStats {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Mean of `N / ℓ²`.
    pub mean_ratio: f64,
    /// `|mean_ratio − κ| / κ`.
    pub relative_deviation: f64,
    /// Mean and variance of `(N − κ ℓ²) / ℓ`.
    pub mean_normalized: f64,
    pub var_normalized: f64,
    /// 10, 25, 50, 75 and 90 percent quantiles of the normalized values.
    pub quantiles: [f64; 5],
    pub normalized: Vec<f64>,
}

/// Statistics of `(N(γ) − κ ℓ²)/ℓ` for census entries in each half-open band `(lo, hi]`.
pub fn closed_fluctuation_summary(census: &GeodesicCensus, bands: &[(f64, f64)], kappa: f64) -> Result<Vec<BandStats>> {
    let pairs: Vec<(f64, usize)> = census.entries.iter().map(|e| (e.length, e.n_self)).collect();
    band_statistics(&pairs, bands, kappa)
}

/// Band statistics from `(ℓ, N)` pairs alone.
pub fn band_statistics(pairs: &[(f64, usize)], bands: &[(f64, f64)], kappa: f64) -> Result<Vec<BandStats>> {
    bands
        .iter()
        .map(|&(lo, hi)| {
            let members: Vec<(f64, f64)> =
                pairs.iter().filter(|e| e.0 > lo && e.0 <= hi).map(|&(l, n)| (l, n as f64)).collect();
            if members.len() < 10 {
                return Err(Error::InsufficientData(format!("{} geodesics in band ({lo}, {hi}]", members.len())));
            }
            let n = members.len() as f64;
            let mean_ratio = members.iter().map(|(l, c)| c / (l * l)).sum::<f64>() / n;
            let normalized: Vec<f64> = members.iter().map(|(l, c)| (c - kappa * l * l) / l).collect();
            let summary = crate::stats::summary(&normalized);
            Ok(BandStats {
                lo,
                hi,
                count: members.len(),
                mean_ratio,
                relative_deviation: (mean_ratio - kappa).abs() / kappa,
                mean_normalized: summary.mean,
                var_normalized: summary.variance,
                quantiles: summary.quantiles,
                normalized,
            })
        })
        .collect()
}
