//! Poincaré disk geometry: points, SU(1,1) isometries, unit tangents,
//! geodesic segments and the transversal crossing test.

use crate::error::{Error, Result};
use num_complex::Complex64 as Complex;
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

/// Points closer than this to the unit circle are rejected.
pub const DISK_MARGIN: f64 = 1e-12;
/// Crossings flatter than this are degenerate.
pub const TAU_ANGLE: f64 = 1e-6;
/// Crossings this close to an endpoint (in arc length) are flagged.
pub const TAU_END: f64 = 1e-9;
/// Default bound on surface segment length for a single crossing.
pub const RHO_DEFAULT: f64 = 0.5;

/// Wraps an angle into `[0, 2π)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let r = theta.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiskPoint {
    pub z: Complex,
}

impl DiskPoint {
    pub fn new(z: Complex) -> Result<Self> {
        if z.norm() < 1.0 - DISK_MARGIN && z.re.is_finite() && z.im.is_finite() {
            Ok(Self { z })
        } else {
            Err(Error::Domain(z.norm()))
        }
    }

    pub fn from_xy(x: f64, y: f64) -> Result<Self> {
        Self::new(Complex::new(x, y))
    }

    pub const ORIGIN: DiskPoint = DiskPoint { z: Complex { re: 0.0, im: 0.0 } };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub angle: f64,
}

impl BoundaryPoint {
    pub fn new(angle: f64) -> Self {
        Self { angle: normalize_angle(angle) }
    }

    pub fn from_complex(w: Complex) -> Self {
        Self::new(w.arg())
    }

    pub fn to_complex(self) -> Complex {
        Complex::from_polar(1.0, self.angle)
    }

    /// Unsigned angular separation in `[0, π]`.
    pub fn separation(self, other: BoundaryPoint) -> f64 {
        let d = (self.angle - other.angle).rem_euclid(TAU);
        d.min(TAU - d)
    }
}

/// Möbius map `z ↦ (a z + b) / (b̄ z + ā)` with `|a|² − |b|² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Isometry {
    pub a: Complex,
    pub b: Complex,
}

impl Isometry {
    pub const IDENTITY: Isometry = Isometry { a: Complex { re: 1.0, im: 0.0 }, b: Complex { re: 0.0, im: 0.0 } };

    /// Builds and renormalizes. Fails if `|a|² − |b|²` is not positive.
    pub fn new(a: Complex, b: Complex) -> Result<Self> {
        let det = a.norm_sqr() - b.norm_sqr();
        if !(det > 0.0) || !det.is_finite() {
            return Err(Error::DegenerateInput(format!("isometry determinant {det}")));
        }
        let s = det.sqrt();
        Ok(Self { a: a / s, b: b / s })
    }

    /// Rotation about the origin by `phi`.
    pub fn rotation(phi: f64) -> Self {
        Self { a: Complex::from_polar(1.0, phi / 2.0), b: Complex::new(0.0, 0.0) }
    }

    /// Translation by hyperbolic distance `t` along the real diameter.
    pub fn translation(t: f64) -> Self {
        Self { a: Complex::new((t / 2.0).cosh(), 0.0), b: Complex::new((t / 2.0).sinh(), 0.0) }
    }

    /// The map `z ↦ (z + p)/(1 + p̄ z)` sending 0 to `p`.
    pub fn moving_origin_to(p: Complex) -> Self {
        let s = (1.0 - p.norm_sqr()).sqrt();
        Self { a: Complex::new(1.0 / s, 0.0), b: p / s }
    }

    pub fn det(&self) -> f64 {
        self.a.norm_sqr() - self.b.norm_sqr()
    }

    pub fn renormalized(self) -> Self {
        let s = self.det().sqrt();
        Self { a: self.a / s, b: self.b / s }
    }

    /// `self ∘ other`: apply `other` first.
    ///
    /// The product is renormalized while its coefficients are moderate; for
    /// large coefficients `|a|² − |b|²` cancels catastrophically and rescaling
    /// would inject more error than it removes.
    pub fn compose(&self, other: &Isometry) -> Isometry {
        let a = self.a * other.a + self.b * other.b.conj();
        let b = self.a * other.b + self.b * other.a.conj();
        let m = Isometry { a, b };
        if a.norm_sqr() < 1e4 {
            m.renormalized()
        } else {
            m
        }
    }

    pub fn inverse(&self) -> Isometry {
        Isometry { a: self.a.conj(), b: -self.b }
    }

    /// Raw Möbius action on a complex number (no domain check).
    #[inline]
    pub fn map(&self, z: Complex) -> Complex {
        (self.a * z + self.b) / (self.b.conj() * z + self.a.conj())
    }

    /// Argument of the complex derivative at `z`, i.e. the rotation applied to tangent directions.
    #[inline]
    pub fn derivative_arg(&self, z: Complex) -> f64 {
        -2.0 * (self.b.conj() * z + self.a.conj()).arg()
    }

    pub fn apply(&self, p: DiskPoint) -> Result<DiskPoint> {
        if p.z.norm() >= 1.0 - DISK_MARGIN {
            return Err(Error::Domain(p.z.norm()));
        }
        DiskPoint::new(self.map(p.z))
    }

    pub fn apply_tangent(&self, u: &UnitTangent) -> UnitTangent {
        UnitTangent::from_frame(&self.compose(&u.frame()))
    }

    /// Twice the real part of `a`; sign depends on the SU(1,1) lift.
    pub fn trace(&self) -> f64 {
        2.0 * self.a.re
    }

    pub fn is_hyperbolic(&self) -> bool {
        self.trace().abs() > 2.0 + 1e-10
    }

    /// Translation length `2 arccosh(|tr|/2)`, zero for non-hyperbolic maps.
    pub fn translation_length(&self) -> f64 {
        let h = self.a.re.abs();
        if h <= 1.0 {
            0.0
        } else {
            2.0 * h.acosh()
        }
    }

    /// Attracting and repelling boundary fixed points of a hyperbolic map.
    pub fn fixed_points(&self) -> Result<(BoundaryPoint, BoundaryPoint)> {
        if !self.is_hyperbolic() {
            return Err(Error::NotHyperbolic(self.trace().abs()));
        }
        // b̄ z² + (ā − a) z − b = 0, roots on the unit circle.
        let bc = self.b.conj();
        let lin = self.a.conj() - self.a;
        let disc = (lin * lin + 4.0 * bc * self.b).sqrt();
        let r1 = (-lin + disc) / (2.0 * bc);
        let r2 = (-lin - disc) / (2.0 * bc);
        // The attracting point has derivative of modulus below 1.
        let d1 = (bc * r1 + self.a.conj()).norm();
        let (att, rep) = if d1 > 1.0 { (r1, r2) } else { (r2, r1) };
        Ok((BoundaryPoint::from_complex(att), BoundaryPoint::from_complex(rep)))
    }

    /// Max coefficient difference, insensitive to the ±1 ambiguity.
    pub fn distance_to(&self, other: &Isometry) -> f64 {
        let d = |s: f64| (self.a - s * other.a).norm().max((self.b - s * other.b).norm());
        d(1.0).min(d(-1.0))
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        self.distance_to(&Isometry::IDENTITY) <= tol
    }
}

/// Hyperbolic distance in the disk.
pub fn hyp_distance(p: DiskPoint, q: DiskPoint) -> f64 {
    hyp_distance_z(p.z, q.z)
}

#[inline]
pub fn hyp_distance_z(p: Complex, q: Complex) -> f64 {
    // 2 artanh |(p − q)/(1 − q̄ p)| is accurate for nearby points.
    // Fixed argument order keeps the result bitwise symmetric.
    let (p, q) = if (p.re, p.im) <= (q.re, q.im) { (p, q) } else { (q, p) };
    let r = ((p - q) / (Complex::new(1.0, 0.0) - q.conj() * p)).norm();
    if r >= 1.0 {
        f64::INFINITY
    } else {
        2.0 * r.atanh()
    }
}

/// Distance of a point from the origin.
#[inline]
pub fn dist_from_origin(z: Complex) -> f64 {
    2.0 * z.norm().atanh()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitTangent {
    pub base: DiskPoint,
    pub direction: f64,
}

impl UnitTangent {
    pub fn new(base: DiskPoint, direction: f64) -> Self {
        Self { base, direction: normalize_angle(direction) }
    }

    /// The isometry sending the unit tangent (0, direction 0) to `self`.
    pub fn frame(&self) -> Isometry {
        Isometry::moving_origin_to(self.base.z).compose(&Isometry::rotation(self.direction))
    }

    pub fn from_frame(m: &Isometry) -> Self {
        let z = m.b / m.a.conj();
        Self { base: DiskPoint { z }, direction: normalize_angle(2.0 * m.a.arg()) }
    }

    /// Geodesic flow for time `t` (negative times run backwards).
    pub fn flow(&self, t: f64) -> UnitTangent {
        UnitTangent::from_frame(&self.frame().compose(&Isometry::translation(t)))
    }

    pub fn reversed(&self) -> UnitTangent {
        UnitTangent::new(self.base, self.direction + PI)
    }
}

/// Forward and backward ideal endpoints of the geodesic through `u`.
pub fn geodesic_endpoints(u: &UnitTangent) -> (BoundaryPoint, BoundaryPoint) {
    let m = u.frame();
    (
        BoundaryPoint::from_complex(m.map(Complex::new(1.0, 0.0))),
        BoundaryPoint::from_complex(m.map(Complex::new(-1.0, 0.0))),
    )
}

/// Euclidean circle carrying the geodesic with the given ideal endpoints,
/// or `None` for a diameter. Returns (center, radius).
pub fn carrier_circle(e1: BoundaryPoint, e2: BoundaryPoint) -> Option<(Complex, f64)> {
    let half = 0.5 * (e2.angle - e1.angle);
    let c = half.cos();
    if c.abs() < 1e-15 {
        return None;
    }
    let mid = 0.5 * (e1.angle + e2.angle);
    let center = Complex::from_polar(1.0 / c, mid);
    Some((center, half.tan().abs()))
}

/// Unit tangent at the point of the line `back → fwd` nearest the origin, pointing to `fwd`.
pub fn tangent_on_line(back: BoundaryPoint, fwd: BoundaryPoint) -> UnitTangent {
    let (p, q) = (back.to_complex(), fwd.to_complex());
    let h = 0.5 * back.separation(fwd);
    let s = p + q;
    let base = if s.norm() < 1e-14 { Complex::new(0.0, 0.0) } else { s / s.norm() * ((1.0 - h.sin()) / h.cos()) };
    let dir = Isometry::moving_origin_to(base).inverse().map(q).arg();
    UnitTangent::new(DiskPoint { z: base }, dir)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicSegment {
    pub start: UnitTangent,
    pub length: f64,
    /// Forward and backward ideal endpoints of the carrying line.
    pub endpoints: (BoundaryPoint, BoundaryPoint),
    frame: Isometry,
}

impl GeodesicSegment {
    pub fn new(start: UnitTangent, length: f64) -> Result<Self> {
        if !(length >= 0.0) || !length.is_finite() {
            return Err(Error::DegenerateInput(format!("segment length {length}")));
        }
        Ok(Self::from_frame(start.frame(), length))
    }

    pub fn from_frame(frame: Isometry, length: f64) -> Self {
        let start = UnitTangent::from_frame(&frame);
        let endpoints = (
            BoundaryPoint::from_complex(frame.map(Complex::new(1.0, 0.0))),
            BoundaryPoint::from_complex(frame.map(Complex::new(-1.0, 0.0))),
        );
        Self { start, length, endpoints, frame }
    }

    pub fn frame(&self) -> &Isometry {
        &self.frame
    }

    /// Point at arc length `t` from the start.
    #[inline]
    pub fn point_at(&self, t: f64) -> Complex {
        self.frame.map(Complex::new((t / 2.0).tanh(), 0.0))
    }

    pub fn start_point(&self) -> Complex {
        self.start.base.z
    }

    pub fn end_point(&self) -> Complex {
        self.point_at(self.length)
    }

    pub fn end_tangent(&self) -> UnitTangent {
        UnitTangent::from_frame(&self.frame.compose(&Isometry::translation(self.length)))
    }

    pub fn transformed(&self, g: &Isometry) -> GeodesicSegment {
        GeodesicSegment::from_frame(g.compose(&self.frame), self.length)
    }
}

/// Outcome of a crossing test between two segments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingResult {
    pub crossed: bool,
    pub point: Option<DiskPoint>,
    /// Unsigned angle between the two directions, in `(0, π)`.
    pub angle: Option<f64>,
    /// Arc-length parameters of the crossing on each segment.
    pub params: Option<(f64, f64)>,
    pub degenerate: bool,
}

impl CrossingResult {
    const NONE: CrossingResult =
        CrossingResult { crossed: false, point: None, angle: None, params: None, degenerate: false };
}

/// Where the carrying lines of two segments meet, in arc-length parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LineMeet {
    /// Lines share no point in the disk.
    Disjoint,
    /// Same line; `offset` is the parameter of the second start on the first,
    /// `same_direction` tells whether orientations agree.
    Collinear { offset: f64, same_direction: bool },
    /// Lines cross at `t1` on the first and `t2` on the second. `dir` is the
    /// signed direction of the second line relative to the first, in `(−π, π]`;
    /// `angle = |dir|`.
    Cross { t1: f64, t2: f64, angle: f64, dir: f64 },
}

/// Intersects the full carrying lines of two framed geodesics.
pub fn line_meet(f1: &Isometry, f2: &Isometry) -> LineMeet {
    // Move the first line to the real diameter.
    let g = f1.inverse().compose(f2);
    let (a, b) = (g.a, g.b);
    let k = (a * b).im;
    let m = (a * a + b * b).im;
    let scale = a.norm_sqr() + b.norm_sqr();
    let x = if k.abs() <= 1e-15 * scale {
        if m.abs() <= 1e-15 * scale {
            let y = g.map(Complex::new(0.0, 0.0)).re;
            let same = g.derivative_arg(Complex::new(0.0, 0.0)).cos() > 0.0;
            return LineMeet::Collinear { offset: 2.0 * y.atanh(), same_direction: same };
        }
        0.0
    } else {
        let disc = m * m - 4.0 * k * k;
        if disc <= 0.0 {
            return LineMeet::Disjoint;
        }
        -2.0 * k / (m + m.signum() * disc.sqrt())
    };
    if !(x.abs() < 1.0) {
        return LineMeet::Disjoint;
    }
    let y = g.map(Complex::new(x, 0.0)).re;
    if !(y.abs() < 1.0) {
        return LineMeet::Disjoint;
    }
    let raw = g.derivative_arg(Complex::new(x, 0.0));
    let dir = raw.sin().atan2(raw.cos());
    LineMeet::Cross { t1: 2.0 * y.atanh(), t2: 2.0 * x.atanh(), angle: dir.abs(), dir }
}

/// Transversal crossing test on half-open segments `[0, L)`.
///
/// Crossings within [`TAU_END`] of an endpoint or flatter than [`TAU_ANGLE`]
/// set `degenerate`; whether they count is decided by the half-open rule.
pub fn segment_cross(s1: &GeodesicSegment, s2: &GeodesicSegment) -> CrossingResult {
    match line_meet(&s1.frame, &s2.frame) {
        LineMeet::Disjoint | LineMeet::Collinear { .. } => CrossingResult::NONE,
        LineMeet::Cross { t1, t2, angle, .. } => {
            let inside = |t: f64, l: f64| t >= 0.0 && t < l;
            let near_end = |t: f64, l: f64| t.abs() < TAU_END || (t - l).abs() < TAU_END;
            let flat = angle < TAU_ANGLE || angle > PI - TAU_ANGLE;
            let degenerate = flat
                || (near_end(t1, s1.length) && t2 > -TAU_END && t2 < s2.length + TAU_END)
                || (near_end(t2, s2.length) && t1 > -TAU_END && t1 < s1.length + TAU_END);
            if inside(t1, s1.length) && inside(t2, s2.length) && !flat {
                CrossingResult {
                    crossed: true,
                    point: Some(DiskPoint { z: s1.point_at(t1) }),
                    angle: Some(angle),
                    params: Some((t1, t2)),
                    degenerate,
                }
            } else {
                CrossingResult { degenerate, ..CrossingResult::NONE }
            }
        }
    }
}
