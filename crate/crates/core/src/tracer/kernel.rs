//! The length-δ intersection kernel, its row integral, and localized counts.

use super::{IntersectionRecord, SegmentChain};
use crate::error::{Error, Result};
use crate::hypgeo::{hyp_distance_z, segment_cross, DiskPoint, GeodesicSegment, Isometry, UnitTangent};
use crate::surface::Surface;
use num_complex::Complex64 as Complex;
use rand::Rng;
use serde::Serialize;
use std::f64::consts::{PI, TAU};

/// Group elements that can bring a δ-segment near another one based in the polygon.
#[derive(Debug, Clone)]
pub struct KernelContext<'a> {
    pub surface: &'a Surface,
    pub delta: f64,
    near: Vec<Isometry>,
}

impl<'a> KernelContext<'a> {
    pub fn new(surface: &'a Surface, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta <= crate::hypgeo::RHO_DEFAULT) {
            return Err(Error::Config(format!("kernel length {delta} outside (0, ϱ]")));
        }
        let near = surface.ball(2.0 * surface.circumradius + 2.0 * delta + 1e-6).into_iter().map(|(_, g)| g).collect();
        Ok(Self { surface, delta, near })
    }

    /// `H_δ(u, v)` for tangents based in the closed polygon; second value flags degeneracy.
    pub fn eval(&self, u: &UnitTangent, v: &UnitTangent) -> (u8, bool) {
        let su = GeodesicSegment::from_frame(u.frame(), self.delta);
        let fv = v.frame();
        let reach = 2.0 * self.delta + 1e-9;
        let mut hit = 0u8;
        let mut degenerate = false;
        for g in &self.near {
            if hyp_distance_z(u.base.z, g.map(v.base.z)) > reach {
                continue;
            }
            let sv = GeodesicSegment::from_frame(g.compose(&fv), self.delta);
            let c = segment_cross(&su, &sv);
            degenerate |= c.degenerate;
            if c.crossed {
                hit = 1;
            }
        }
        (hit, degenerate)
    }
}

/// `H_δ(u, v)`: 1 when the length-δ surface segments from `u` and `v` cross.
pub fn intersection_kernel(u: &UnitTangent, v: &UnitTangent, delta: f64, s: &Surface) -> Result<(u8, bool)> {
    let ctx = KernelContext::new(s, delta)?;
    let (u, _) = s.reduce_tangent(u)?;
    let (v, _) = s.reduce_tangent(v)?;
    Ok(ctx.eval(&u, &v))
}

/// Crossings per unit length squared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossingIntensity {
    pub kappa_hat: f64,
    pub stderr: f64,
}

/// Monte Carlo estimate of `∫ H_δ(u, v) dν_L(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RowIntegral {
    pub estimate: f64,
    pub stderr: f64,
    pub delta: f64,
    pub samples: usize,
    pub hits: usize,
    pub degenerate: usize,
}

impl RowIntegral {
    /// Crossing intensity implied by the row integral: `½ · estimate / δ²`.
    pub fn intensity(&self) -> CrossingIntensity {
        let k = 0.5 / (self.delta * self.delta);
        CrossingIntensity { kappa_hat: k * self.estimate, stderr: k * self.stderr }
    }
}

/// Estimates the kernel row integral at `u`.
///
/// `H_δ(u, ·)` vanishes unless the base of `v` lies within `2δ` of the base
/// of `u`, so `v` is drawn uniformly (area × direction) from that ball, reduced
/// to the polygon, and the hit rate is scaled by `area(ball) / area(surface)`.
pub fn kernel_row_integral<R: Rng + ?Sized>(
    ctx: &KernelContext,
    u: &UnitTangent,
    n: usize,
    rng: &mut R,
) -> Result<RowIntegral> {
    if n < 1000 {
        return Err(Error::TooFewSamples(n));
    }
    let s = ctx.surface;
    let (u, _) = s.reduce_tangent(u)?;
    let rho = 2.0 * ctx.delta;
    let ball_area = TAU * (rho.cosh() - 1.0);
    let to_u = u.frame();
    let mut hits = 0usize;
    let mut degenerate = 0usize;
    for _ in 0..n {
        // Area-uniform radius: cosh r uniform on [1, cosh ρ].
        let r = (1.0 + rng.random::<f64>() * (rho.cosh() - 1.0)).acosh();
        let z = Complex::from_polar((r / 2.0).tanh(), rng.random::<f64>() * TAU);
        let v = UnitTangent::new(DiskPoint { z: to_u.map(z) }, rng.random::<f64>() * TAU);
        let (v, _) = s.reduce_tangent(&v)?;
        let (h, d) = ctx.eval(&u, &v);
        hits += h as usize;
        degenerate += d as usize;
    }
    let p = hits as f64 / n as f64;
    let scale = ball_area / s.area;
    Ok(RowIntegral {
        estimate: scale * p,
        stderr: scale * (p * (1.0 - p) / n as f64).sqrt(),
        delta: ctx.delta,
        samples: n,
        hits,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Profile {
    /// `(1 − (d/r)²)²` for `d < r`.
    Polynomial,
    /// 1 for `d < r`.
    Clamped,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BumpFunction {
    pub center: DiskPoint,
    pub radius: f64,
    pub profile: Profile,
}

impl BumpFunction {
    /// Polynomial bump; the radius must stay below the injectivity bound.
    pub fn new(center: DiskPoint, radius: f64, injectivity_bound: f64) -> Result<Self> {
        if !(radius > 0.0 && radius < injectivity_bound) {
            return Err(Error::Config(format!("bump radius {radius} not below {injectivity_bound}")));
        }
        Ok(Self { center, radius, profile: Profile::Polynomial })
    }

    /// Indicator of a ball, used with large radii to recover the plain count.
    pub fn clamped(center: DiskPoint, radius: f64) -> Self {
        Self { center, radius, profile: Profile::Clamped }
    }

    /// Profile value at surface distance `d`.
    pub fn profile_at(&self, d: f64) -> f64 {
        if d >= self.radius {
            return 0.0;
        }
        match self.profile {
            Profile::Polynomial => {
                let x = d / self.radius;
                (1.0 - x * x).powi(2)
            }
            Profile::Clamped => 1.0,
        }
    }

    /// Value at a point of the polygon, using the nearest neighbour translate.
    pub fn value(&self, z: Complex, s: &Surface) -> f64 {
        let d =
            s.neighbor_set.iter().map(|(_, g)| hyp_distance_z(g.map(z), self.center.z)).fold(f64::INFINITY, f64::min);
        self.profile_at(d)
    }
}

/// `Σ φ(x_i)` over the recorded crossing points.
pub fn localized_count(rec: &IntersectionRecord, phi: &BumpFunction, s: &Surface) -> f64 {
    rec.points.iter().map(|p| phi.value(p.point.z, s)).sum()
}

/// Tangents at arc times `0, δ, 2δ, …` along a chain, reduced to the polygon.
pub fn chain_frames(c: &SegmentChain, delta: f64) -> Vec<UnitTangent> {
    let n = (c.total_length / delta).round() as usize;
    (0..n).map(|k| c.tangent_at(k as f64 * delta)).collect()
}

/// Closed form `2δ² / (π · area)` of the row integral for δ below the injectivity radius.
pub fn row_integral_closed_form(delta: f64, area: f64) -> f64 {
    2.0 * delta * delta / (PI * area)
}
