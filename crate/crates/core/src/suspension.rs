//! Suspension flows over a Gibbs chain: Birkhoff sums of a roof function,
//! first passage and overshoot, renewal and CLT experiments.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::stats::{self, KsResult};
use crate::symdyn::{BiSequence, Direction, GibbsChain, Potential, ShiftSpace};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Longest orbit period used by default when testing for a lattice.
pub const DEFAULT_P_MAX: usize = 8;
/// A lattice finer than this multiple of `min F` counts as no lattice.
const LATTICE_FLOOR: f64 = 1e-4;
/// Symbols added per lazy extension of a sample path.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Certificate {
    /// No common lattice; two orbit sums whose ratio broke the last candidate.
    Nonarithmetic { witnesses: (f64, f64), p_max: usize },
    /// Every orbit sum lies on `lattice·ℤ`.
    Arithmetic { lattice: f64, p_max: usize },
}

impl Certificate {
    pub fn passed(&self) -> bool {
        matches!(self, Certificate::Nonarithmetic { .. })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HeightFunction {
    pub f: Potential,
    pub min: f64,
    pub max: f64,
    pub certificate: Option<Certificate>,
}

impl HeightFunction {
    /// Checks positivity on admissible windows; no certificate yet.
    pub fn new(f: Potential, shift: &ShiftSpace) -> Result<Self> {
        let (min, max) = f.range_on(shift);
        if !(min > 0.0) {
            return Err(Error::Config(format!("height must be positive, min is {min}")));
        }
        Ok(Self { f, min, max, certificate: None })
    }

    /// Runs [`arithmetic_test`] and stores the verdict.
    pub fn certified(mut self, shift: &ShiftSpace, p_max: usize) -> Result<Self> {
        self.certificate = Some(arithmetic_test(&self.f, shift, p_max)?);
        Ok(self)
    }

    /// `1 + c·[x₀ = 1]` on the full 2-shift.
    pub fn two_valued(c: f64) -> Self {
        let f = Potential::from_fn(2, 0, |w| 1.0 + c * (w[0] == 1) as u8 as f64);
        Self::new(f, &ShiftSpace::full(2)).expect("positive height")
    }

    fn require_nonarithmetic(&self) -> Result<()> {
        match &self.certificate {
            Some(c) if c.passed() => Ok(()),
            _ => Err(Error::ArithmeticHeight),
        }
    }
}

fn fmod_residual(x: f64, c: f64) -> f64 {
    let r = x - (x / c).round() * c;
    r.abs()
}

/// Approximate real gcd by the Euclidean algorithm with a tolerance.
fn real_gcd(mut a: f64, mut b: f64, tol: f64) -> f64 {
    if a < b {
        std::mem::swap(&mut a, &mut b);
    }
    while b > tol {
        let r = a - (a / b).floor() * b;
        a = b;
        b = if r > b - tol { 0.0 } else { r };
    }
    a
}

/// Falsification test for a lattice carrying all periodic-orbit sums of
/// period at most `p_max`.
pub fn arithmetic_test(f: &Potential, shift: &ShiftSpace, p_max: usize) -> Result<Certificate> {
    if p_max < 3 {
        return Err(Error::Config("p_max must be at least 3".into()));
    }
    let mut sums: Vec<f64> = (1..=p_max)
        .flat_map(|n| shift.cyclic_words(n).into_iter().map(|w| f.periodic_sum(&w)).collect::<Vec<_>>())
        .collect();
    sums.sort_by(f64::total_cmp);
    sums.dedup_by(|a, b| (*a - *b).abs() < 1e-12 * b.abs().max(1.0));
    let scale = sums.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let tol = 1e-9 * scale.max(1.0);
    let min_f = f.range_on(shift).0.abs().max(f64::MIN_POSITIVE);
    let floor = LATTICE_FLOOR * min_f;
    let nonzero: Vec<f64> = sums.iter().map(|s| s.abs()).filter(|&s| s > tol).collect();
    let Some(&first) = nonzero.first() else {
        return Ok(Certificate::Arithmetic { lattice: 0.0, p_max });
    };
    let mut c = first;
    let mut anchor = first;
    for &s in &nonzero[1..] {
        let next = real_gcd(c, s, tol);
        if next < floor {
            return Ok(Certificate::Nonarithmetic { witnesses: (anchor, s), p_max });
        }
        if next < c - tol {
            anchor = s;
        }
        c = next;
    }
    if sums.iter().all(|&s| fmod_residual(s, c) <= tol) {
        Ok(Certificate::Arithmetic { lattice: c, p_max })
    } else {
        // The Euclid scan can stop on a spurious common divisor at tolerance.
        let bad = sums.iter().copied().find(|&s| fmod_residual(s, c) > tol).unwrap();
        Ok(Certificate::Nonarithmetic { witnesses: (anchor, bad), p_max })
    }
}

/// `Σ_{j<n} F(σʲx)`.
pub fn birkhoff_sum(x: &BiSequence, f: &Potential, n: usize) -> Result<f64> {
    let w = x.window(0, n + f.memory)?;
    Ok((0..n).map(|j| f.value(&w[j..])).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstPassage {
    pub tau: usize,
    pub overshoot: f64,
    pub t: f64,
    /// `S_{τ−1}F`.
    pub before: f64,
}

impl FirstPassage {
    /// `(τ − T/E F)/√T`.
    pub fn normalized_tau(&self, mean_f: f64) -> f64 {
        (self.tau as f64 - self.t / mean_f) / self.t.sqrt()
    }
}

/// Least `n ≥ 1` with `S_nF > T`, read from a window.
pub fn first_passage(x: &BiSequence, f: &Potential, t: f64) -> Result<FirstPassage> {
    if !(t >= 0.0) {
        return Err(Error::Domain(t));
    }
    let avail = (x.end().max(0) as usize).saturating_sub(f.memory);
    let w = x.window(0, avail + f.memory)?;
    let mut s = 0.0;
    for n in 0..avail {
        let next = s + f.value(&w[n..]);
        if next > t {
            return Ok(FirstPassage { tau: n + 1, overshoot: next - t, t, before: s });
        }
        s = next;
    }
    Err(Error::WindowTooShort { needed: x.data.len() + 1, have: x.data.len() })
}

/// Samples a stationary path long enough to see the first passage over `t`.
pub fn sample_passage<R: Rng + ?Sized>(
    chain: &GibbsChain,
    f: &Potential,
    t: f64,
    rng: &mut R,
) -> (BiSequence, FirstPassage) {
    let mut x = chain.sample_path(chain.block.max(f.memory + 1), Direction::Forward, rng);
    let mut s = 0.0;
    let mut n = 0;
    loop {
        if x.data.len() < n + f.memory + 1 {
            chain.extend_forward(&mut x, CHUNK, rng);
        }
        let next = s + f.value(&x.data[n..]);
        n += 1;
        if next > t {
            return (x, FirstPassage { tau: n, overshoot: next - t, t, before: s });
        }
        s = next;
    }
}

/// Limit law of the overshoot: `G(r) = E[min(F, r)] / E F`, the integral of
/// the density `μ{F > s}/E F`.
pub struct OvershootLaw {
    /// Distinct values of `F` with their probabilities.
    atoms: Vec<(f64, f64)>,
    mean: f64,
}

impl OvershootLaw {
    pub fn new(chain: &GibbsChain, f: &Potential) -> Self {
        let words = chain.shift.words(f.memory + 1);
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        for w in &words {
            let (v, p) = (f.value(w), chain.cylinder_measure(w).unwrap());
            match atoms.iter_mut().find(|a| (a.0 - v).abs() < 1e-14) {
                Some(a) => a.1 += p,
                None => atoms.push((v, p)),
            }
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mean = atoms.iter().map(|a| a.0 * a.1).sum();
        Self { atoms, mean }
    }

    pub fn mean_f(&self) -> f64 {
        self.mean
    }

    /// `E R∞ = E F² / (2 E F)`.
    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|a| a.0 * a.0 * a.1).sum::<f64>() / (2.0 * self.mean)
    }

    pub fn density(&self, s: f64) -> f64 {
        if s < 0.0 {
            return 0.0;
        }
        self.atoms.iter().filter(|a| a.0 > s).map(|a| a.1).sum::<f64>() / self.mean
    }

    pub fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        (self.atoms.iter().map(|a| a.0.min(r) * a.1).sum::<f64>() / self.mean).min(1.0)
    }

    /// Composite Simpson quadrature of the density between its breakpoints.
    pub fn density_mass(&self) -> f64 {
        let mut knots = vec![0.0];
        knots.extend(self.atoms.iter().map(|a| a.0));
        let mut total = 0.0;
        for k in knots.windows(2) {
            let (a, b) = (k[0], k[1]);
            if b <= a {
                continue;
            }
            let n = 64;
            let h = (b - a) / n as f64;
            // Open at the knots: the density jumps there.
            let eval = |s: f64| self.density(s.clamp(a + 1e-15 * b, b - 1e-15 * b));
            let mut acc = eval(a) + eval(b);
            for i in 1..n {
                acc += eval(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            total += acc * h / 3.0;
        }
        total
    }

    pub fn sup_density(&self) -> f64 {
        self.density(0.0)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IntervalBound {
    pub eps: f64,
    /// Largest empirical `P(a ≤ R ≤ a+ε)/ε` over a grid of `a`.
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OvershootReport {
    pub t: f64,
    pub n: usize,
    pub ks: KsResult,
    pub density_mass: f64,
    pub intervals: Vec<IntervalBound>,
    pub sup_density: f64,
    /// Correlation of `R_T` with the centered indicator of `x₀ = 0`.
    pub independence_corr: f64,
    pub max_overshoot: f64,
    pub samples: Vec<FirstPassage>,
}

impl OvershootReport {
    pub fn pass(&self) -> bool {
        self.ks.statistic < 0.05
            && (self.density_mass - 1.0).abs() < 1e-10
            && self.intervals.iter().all(|i| i.ratio <= 2.0 * self.sup_density)
            && self.independence_corr.abs() < 4.0 / (self.n as f64).sqrt()
    }
}

/// Empirical law of `R_T` from independent stationary starts.
pub fn overshoot_experiment(
    chain: &GibbsChain,
    h: &HeightFunction,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<OvershootReport> {
    h.require_nonarithmetic()?;
    let law = OvershootLaw::new(chain, &h.f);
    if t < 50.0 * law.mean_f() {
        return Err(Error::Config(format!("T = {t} is below 50·E F")));
    }
    let draws: Vec<(FirstPassage, u8)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = stream(seed, 10, i as u64);
            let (x, fp) = sample_passage(chain, &h.f, t, &mut r);
            (fp, x.get(0))
        })
        .collect();
    let r: Vec<f64> = draws.iter().map(|d| d.0.overshoot).collect();
    let ks = stats::ks_one_sample(&r, |v| law.cdf(v))?;
    let intervals = [0.05, 0.1, 0.2]
        .iter()
        .map(|&eps| {
            let mut ratio = 0.0f64;
            let mut a = 0.0;
            while a < h.max {
                let k = r.iter().filter(|&&v| v >= a && v <= a + eps).count();
                ratio = ratio.max(k as f64 / (n as f64 * eps));
                a += eps / 2.0;
            }
            IntervalBound { eps, ratio }
        })
        .collect();
    let ind: Vec<f64> = draws.iter().map(|d| (d.1 == 0) as u8 as f64).collect();
    let independence_corr = correlation(&r, &ind);
    let samples: Vec<FirstPassage> = draws.into_iter().map(|d| d.0).collect();
    let max_overshoot = r.iter().cloned().fold(0.0, f64::max);
    Ok(OvershootReport {
        t,
        n,
        ks,
        density_mass: law.density_mass(),
        intervals,
        sup_density: law.sup_density(),
        independence_corr,
        max_overshoot,
        samples,
    })
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let (sx, sy) = (stats::summary(x), stats::summary(y));
    if sx.variance == 0.0 || sy.variance == 0.0 {
        return 0.0;
    }
    let n = x.len() as f64;
    let c: f64 = x.iter().zip(y).map(|(a, b)| (a - sx.mean) * (b - sy.mean)).sum::<f64>() / (n - 1.0);
    c / (sx.variance * sy.variance).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct ObservableStats {
    pub summary: stats::Summary,
    pub ks: Option<KsResult>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltLevel {
    pub t: f64,
    pub tau: ObservableStats,
    /// Mean of `τ − (T + E R∞)/E F`, over `√T`.
    pub tau_corrected_mean: f64,
    /// One entry per observable `g`: `(S_τ g − T·E g/E F)/√T`.
    pub g: Vec<ObservableStats>,
    /// Per draw: normalized `τ`, then the normalized observables.
    #[serde(skip)]
    pub rows: Vec<(f64, Vec<f64>)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub levels: Vec<CltLevel>,
}

/// Normality of the first passage and of observables summed up to it.
pub fn clt_experiment(
    chain: &GibbsChain,
    h: &HeightFunction,
    g: &[Potential],
    ts: &[f64],
    n: usize,
    seed: u64,
) -> Result<CltReport> {
    h.require_nonarithmetic()?;
    let law = OvershootLaw::new(chain, &h.f);
    let ef = law.mean_f();
    let eg: Vec<f64> = g.iter().map(|p| chain.expectation(p)).collect();
    let mut levels = Vec::new();
    for (level, &t) in ts.iter().enumerate() {
        let rows: Vec<(f64, Vec<f64>)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = stream(seed, 11, ((level as u64) << 32) | i as u64);
                let (mut x, fp) = sample_passage(chain, &h.f, t, &mut r);
                let need = fp.tau + g.iter().map(|p| p.memory).max().unwrap_or(0);
                if x.data.len() < need {
                    let k = need - x.data.len();
                    chain.extend_forward(&mut x, k, &mut r);
                }
                let gs = g
                    .iter()
                    .zip(&eg)
                    .map(|(p, m)| {
                        let s = birkhoff_sum(&x, p, fp.tau).expect("window extended");
                        (s - t * m / ef) / t.sqrt()
                    })
                    .collect();
                (fp.normalized_tau(ef), gs)
            })
            .collect();
        let tau: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let shift = law.mean() / ef / t.sqrt();
        let tau_stats = describe(&tau);
        let tau_corrected_mean = tau_stats.summary.mean - shift;
        let g = (0..g.len()).map(|k| describe(&rows.iter().map(|r| r.1[k]).collect::<Vec<_>>())).collect();
        levels.push(CltLevel { t, tau: tau_stats, tau_corrected_mean, g, rows });
    }
    Ok(CltReport { levels })
}

fn describe(x: &[f64]) -> ObservableStats {
    ObservableStats { summary: stats::summary(x), ks: stats::ks_fitted_gaussian(x).ok() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symdyn::gibbs_from_potential;

    #[test]
    fn sums_and_passages() {
        let one = Potential::constant(2, 1.0);
        let x = BiSequence { start: 0, data: vec![0, 1, 1, 0, 1, 0, 0, 1, 1, 1] };
        assert_eq!(birkhoff_sum(&x, &one, 7).unwrap(), 7.0);
        let fp = first_passage(&x, &one, 5.5).unwrap();
        assert_eq!((fp.tau, fp.overshoot), (6, 0.5));
        assert_eq!(first_passage(&x, &one, 0.3).unwrap().tau, 1);
        assert!(matches!(birkhoff_sum(&x, &one, 11), Err(Error::WindowTooShort { .. })));
        let f = Potential::from_fn(2, 1, |w| 1.0 + w[0] as f64 * 0.5 + w[1] as f64 * 0.25);
        for (n, m) in [(2, 3), (4, 4), (1, 7)] {
            let lhs = birkhoff_sum(&x, &f, n + m).unwrap();
            let rhs = birkhoff_sum(&x, &f, n).unwrap() + birkhoff_sum(&x.shifted(n as i64), &f, m).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_detection() {
        let full = ShiftSpace::full(2);
        assert_eq!(
            arithmetic_test(&Potential::constant(2, 1.0), &full, 8).unwrap(),
            Certificate::Arithmetic { lattice: 1.0, p_max: 8 }
        );
        // Orbit sums n + 0.3j share the lattice 0.1.
        let h = HeightFunction::two_valued(0.3);
        match arithmetic_test(&h.f, &full, 8).unwrap() {
            Certificate::Arithmetic { lattice, .. } => assert!((lattice - 0.1).abs() < 1e-9),
            c => panic!("{c:?}"),
        }
        let h = HeightFunction::two_valued(std::f64::consts::FRAC_PI_4);
        assert!(arithmetic_test(&h.f, &full, 8).unwrap().passed());
        assert!(arithmetic_test(&h.f.scale(2.0), &full, 8).unwrap().passed());
        let c = arithmetic_test(&HeightFunction::two_valued(0.3).f.scale(2.0), &full, 8).unwrap();
        assert!(!c.passed());
        assert!(arithmetic_test(&h.f, &full, 2).is_err());
    }

    #[test]
    fn limit_law() {
        let chain = gibbs_from_potential(&ShiftSpace::full(2), &Potential::constant(2, 0.0)).unwrap();
        let h = HeightFunction::two_valued(std::f64::consts::FRAC_PI_4);
        let law = OvershootLaw::new(&chain, &h.f);
        assert!((law.density_mass() - 1.0).abs() < 1e-10);
        assert!((law.cdf(h.max) - 1.0).abs() < 1e-15);
        // Density drops at 1 from 1/E F to μ{F > 1}/E F.
        let ef = 1.0 + std::f64::consts::FRAC_PI_8;
        assert!((law.density(0.5) - 1.0 / ef).abs() < 1e-14);
        assert!((law.density(1.5) - 0.5 / ef).abs() < 1e-14);
    }

    #[test]
    fn gate_blocks_arithmetic_heights() {
        let chain = gibbs_from_potential(&ShiftSpace::full(2), &Potential::constant(2, 0.0)).unwrap();
        let h = HeightFunction::two_valued(0.3).certified(&ShiftSpace::full(2), 8).unwrap();
        assert!(matches!(overshoot_experiment(&chain, &h, 1000.0, 100, 1), Err(Error::ArithmeticHeight)));
        let h = HeightFunction::two_valued(0.5);
        assert!(matches!(clt_experiment(&chain, &h, &[], &[100.0], 10, 1), Err(Error::ArithmeticHeight)));
    }
}
