//! U-statistics summed up to a first passage, symmetric kernels of finite
//! memory, Hoeffding projections, periodic-orbit cohomology tests, the
//! fluctuation dichotomy and periodic-orbit ensembles.

use crate::error::{Error, Result};
use crate::rng::stream;
use crate::stats::{self, KsResult, Regression};
use crate::suspension::{first_passage, sample_passage, HeightFunction};
use crate::symdyn::{gibbs_from_potential, word_code, BiSequence, GibbsChain, Potential, ShiftSpace, STATE_CAP};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::HashMap;

/// Default longest period for cohomology checks.
pub const LIVSIC_P_MAX: usize = 10;
/// Largest ensemble before enumeration gives up.
pub const ENSEMBLE_CAP: usize = 2_000_000;
/// Slack on the window `(T, T+ε]` so that sums landing on its ends are
/// classified the same way regardless of summation order.
pub const ENSEMBLE_TOL: f64 = 1e-9;

/// `h_m` on pairs of words of length `memory + 1`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelPiece {
    pub memory: usize,
    /// Indexed by `code(w)·q^{m+1} + code(w′)`.
    pub table: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolicKernel {
    pub q: usize,
    pub pieces: Vec<KernelPiece>,
}

fn decode(mut c: usize, q: usize, len: usize) -> Vec<u8> {
    let mut w = vec![0u8; len];
    for k in (0..len).rev() {
        w[k] = (c % q) as u8;
        c /= q;
    }
    w
}

impl SymbolicKernel {
    pub fn zero(q: usize) -> Self {
        Self { q, pieces: vec![] }
    }

    pub fn constant(q: usize, c: f64) -> Self {
        Self { q, pieces: vec![KernelPiece { memory: 0, table: vec![c; q * q] }] }
    }

    /// Adds the piece `f` at memory `m`; `f` must be symmetric.
    pub fn with_piece(mut self, memory: usize, f: impl Fn(&[u8], &[u8]) -> f64) -> Result<Self> {
        let q = self.q;
        let n = q
            .checked_pow(memory as u32 + 1)
            .filter(|&n| n * n <= STATE_CAP * STATE_CAP)
            .ok_or(Error::MemoryCap(memory))?;
        let words: Vec<Vec<u8>> = (0..n).map(|c| decode(c, q, memory + 1)).collect();
        let mut table = vec![0.0; n * n];
        for (i, a) in words.iter().enumerate() {
            for (j, b) in words.iter().enumerate() {
                table[i * n + j] = f(a, b);
            }
        }
        for i in 0..n {
            for j in 0..i {
                if table[i * n + j] != table[j * n + i] {
                    return Err(Error::Config(format!("kernel piece at memory {memory} is not symmetric")));
                }
            }
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("kernel values must be finite".into()));
        }
        self.pieces.push(KernelPiece { memory, table });
        Ok(self)
    }

    pub fn from_fn(q: usize, memory: usize, f: impl Fn(&[u8], &[u8]) -> f64) -> Result<Self> {
        Self::zero(q).with_piece(memory, f)
    }

    /// `f(x)·f(y)`.
    pub fn product(f: &Potential) -> Self {
        Self::from_fn(f.q, f.memory, |a, b| f.value(a) * f.value(b)).expect("symmetric")
    }

    /// `g(x) + g(y)`.
    pub fn additive(g: &Potential) -> Self {
        Self::from_fn(g.q, g.memory, |a, b| g.value(a) + g.value(b)).expect("symmetric")
    }

    /// Largest piece memory.
    pub fn memory(&self) -> usize {
        self.pieces.iter().map(|p| p.memory).max().unwrap_or(0)
    }

    /// `sup|h_m|` per piece.
    pub fn decay_bound(&self) -> Vec<(usize, f64)> {
        self.pieces.iter().map(|p| (p.memory, p.table.iter().fold(0.0f64, |m, v| m.max(v.abs())))).collect()
    }

    /// `h(x, y)` from windows of length at least `memory() + 1`.
    pub fn value(&self, x: &[u8], y: &[u8]) -> f64 {
        self.pieces
            .iter()
            .map(|p| {
                let n = self.q.pow(p.memory as u32 + 1);
                p.table[word_code(&x[..=p.memory], self.q) * n + word_code(&y[..=p.memory], self.q)]
            })
            .sum()
    }

    fn value_codes(&self, cx: usize, cy: usize, big: usize) -> f64 {
        let q = self.q;
        self.pieces
            .iter()
            .map(|p| {
                let drop = q.pow((big - p.memory) as u32);
                let n = q.pow(p.memory as u32 + 1);
                p.table[(cx / drop) * n + cy / drop]
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UStatSample {
    pub u: f64,
    pub tau: usize,
    pub overshoot: f64,
    pub t: f64,
    pub normalized: Option<f64>,
}

/// `U_T = Σ_{i,j<τ} h(σⁱx, σʲx)`, grouping equal windows.
pub fn u_statistic(x: &BiSequence, k: &SymbolicKernel, f: &Potential, t: f64) -> Result<UStatSample> {
    let fp = first_passage(x, f, t)?;
    let u = u_sum(x, k, fp.tau)?;
    Ok(UStatSample { u, tau: fp.tau, overshoot: fp.overshoot, t, normalized: None })
}

/// The double sum over `0 ≤ i, j < n`.
pub fn u_sum(x: &BiSequence, k: &SymbolicKernel, n: usize) -> Result<f64> {
    if k.pieces.is_empty() || n == 0 {
        return Ok(0.0);
    }
    let m = k.memory();
    let w = x.window(0, n + m)?;
    let q = k.q;
    let top = q.pow(m as u32);
    let mut counts: HashMap<usize, u64> = HashMap::new();
    let mut code = word_code(&w[..=m], q);
    *counts.entry(code).or_default() += 1;
    for i in 1..n {
        code = (code % top) * q + w[i + m] as usize;
        *counts.entry(code).or_default() += 1;
    }
    let mut distinct: Vec<(usize, u64)> = counts.into_iter().collect();
    distinct.sort_unstable();
    let mut u = 0.0;
    for &(a, na) in &distinct {
        for &(b, nb) in &distinct {
            u += (na * nb) as f64 * k.value_codes(a, b, m);
        }
    }
    Ok(u)
}

/// `h₊(x) = ∫ h(x, y) dμ(y)`, exactly.
pub fn hoeffding_projection(k: &SymbolicKernel, chain: &GibbsChain) -> Result<Potential> {
    let m = k.memory();
    let q = k.q;
    if q.checked_pow(m as u32 + 1).is_none_or(|n| n > STATE_CAP) {
        return Err(Error::MemoryCap(m));
    }
    let mut out = Potential::from_fn(q, m, |_| 0.0);
    for p in &k.pieces {
        let n = q.pow(p.memory as u32 + 1);
        let mu: Vec<f64> = (0..n)
            .map(|c| {
                let w = decode(c, q, p.memory + 1);
                if chain.shift.admissible(&w) {
                    chain.cylinder_measure(&w).unwrap()
                } else {
                    0.0
                }
            })
            .collect();
        let piece = Potential::from_fn(q, p.memory, |w| {
            let i = word_code(w, q);
            (0..n).map(|j| p.table[i * n + j] * mu[j]).sum()
        });
        out = out.add(&piece);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct H3Report {
    /// `(m, j, ∫|h_m(x, σʲx)| dμ)`.
    pub integrals: Vec<(usize, i64, f64)>,
    /// `max_j` of the integral per `m`.
    pub per_memory: Vec<(usize, f64)>,
    pub slope: Option<f64>,
    pub beta_hat: Option<f64>,
    pub pass: bool,
}

/// Exact diagonal integrals of the kernel pieces and their decay in `m`.
pub fn verify_h3(
    k: &SymbolicKernel,
    chain: &GibbsChain,
    j_max: i64,
    m_range: std::ops::RangeInclusive<usize>,
) -> Result<H3Report> {
    let mut integrals = Vec::new();
    let mut per_memory = Vec::new();
    for m in m_range {
        let Some(piece) = k.pieces.iter().find(|p| p.memory == m) else {
            per_memory.push((m, 0.0));
            continue;
        };
        let c = chain.with_block(m + 1)?;
        let s = c.states.len();
        let n = k.q.pow(m as u32 + 1);
        let h: Vec<usize> = c.states.iter().map(|w| word_code(&w[..=m], k.q)).collect();
        let abs_h = |a: usize, b: usize| piece.table[h[a] * n + h[b]].abs();
        // d[a][b] = p(a)·Pʲ(a, b), advanced one step at a time.
        let mut d = DMatrix::<f64>::zeros(s, s);
        for a in 0..s {
            d[(a, a)] = c.stationary[a];
        }
        let mut best = 0.0f64;
        for j in 0..=j_max {
            if j > 0 {
                let mut next = DMatrix::<f64>::zeros(s, s);
                for a in 0..s {
                    for b in 0..s {
                        let v = d[(a, b)];
                        if v != 0.0 {
                            for &(b2, pr) in &c.succ[b] {
                                next[(a, b2)] += v * pr;
                            }
                        }
                    }
                }
                d = next;
            }
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            for a in 0..s {
                for b in 0..s {
                    let v = d[(a, b)];
                    if v != 0.0 {
                        fwd += v * abs_h(a, b);
                        // x at offset 0 is the later window when j < 0.
                        bwd += v * abs_h(b, a);
                    }
                }
            }
            integrals.push((m, j, fwd));
            if j > 0 {
                integrals.push((m, -j, bwd));
            }
            best = best.max(fwd).max(bwd);
        }
        per_memory.push((m, best));
    }
    let pts: Vec<(f64, f64)> = per_memory.iter().filter(|p| p.1 > 0.0).map(|p| (p.0 as f64, p.1.ln())).collect();
    let slope = (pts.len() >= 2).then(|| crate::symdyn::least_squares_slope(&pts));
    let pass = slope.is_none_or(|s| s < 0.0);
    Ok(H3Report { integrals, per_memory, slope, beta_hat: slope.map(f64::exp), pass })
}

/// Default `j` range for [`verify_h3`].
pub fn default_j_max(k: &SymbolicKernel) -> i64 {
    2 * k.memory() as i64 + 10
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitWitness {
    pub word: Vec<u8>,
    /// Fitted coefficients on the basis.
    pub coefficients: Vec<f64>,
    /// Periodic sum of the tested function minus the fitted combination.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum CohomologyStatus {
    /// Coefficients on the basis, up to `max_period_checked`.
    CohomologousTo(Vec<f64>),
    NotCohomologous(Vec<OrbitWitness>),
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CohomologyVerdict {
    pub status: CohomologyStatus,
    pub max_period_checked: usize,
}

impl CohomologyVerdict {
    /// The scalar for a one-element basis.
    pub fn a(&self) -> Option<f64> {
        match &self.status {
            CohomologyStatus::CohomologousTo(c) if c.len() == 1 => Some(c[0]),
            _ => None,
        }
    }

    pub fn is_cohomologous(&self) -> bool {
        matches!(self.status, CohomologyStatus::CohomologousTo(_))
    }
}

/// Periodic points of period at most `p_max`, one per orbit.
fn orbit_representatives(shift: &ShiftSpace, p_max: usize) -> Vec<Vec<u8>> {
    let mut out = Vec::new();
    for n in 1..=p_max {
        for w in shift.cyclic_words(n) {
            // Least rotation of a primitive word.
            let primitive = (1..n).all(|d| n % d != 0 || w[..n - d] != w[d..]);
            let least = (1..n).all(|r| w[..] <= [&w[r..], &w[..r]].concat()[..]);
            if primitive && least {
                out.push(w);
            }
        }
    }
    out
}

/// Is `f` cohomologous to `a·g`? The scalar comes from the shortest orbit
/// with nonzero `S_p g`.
pub fn livsic_test(f: &Potential, g: &Potential, shift: &ShiftSpace, p_max: usize) -> Result<CohomologyVerdict> {
    if p_max < f.memory.max(g.memory) + 2 {
        return Err(Error::Config(format!("p_max must be at least {}", f.memory.max(g.memory) + 2)));
    }
    let orbits = orbit_representatives(shift, p_max);
    let sums: Vec<(f64, f64)> = orbits.iter().map(|w| (f.periodic_sum(w), g.periodic_sum(w))).collect();
    let reference = sums.iter().position(|s| s.1.abs() > 1e-12);
    let a = reference.map_or(0.0, |i| sums[i].0 / sums[i].1);
    let residual = |i: usize| sums[i].0 - a * sums[i].1;
    let worst = (0..orbits.len()).max_by(|&i, &j| {
        (residual(i).abs() / orbits[i].len() as f64).total_cmp(&(residual(j).abs() / orbits[j].len() as f64))
    });
    let status = match worst {
        Some(i) if residual(i).abs() > 1e-8 * orbits[i].len() as f64 => {
            if residual(i).abs() > 1e-6 {
                CohomologyStatus::NotCohomologous(vec![OrbitWitness {
                    word: orbits[i].clone(),
                    coefficients: vec![a],
                    residual: residual(i),
                }])
            } else {
                CohomologyStatus::Inconclusive
            }
        }
        _ => CohomologyStatus::CohomologousTo(vec![a]),
    };
    Ok(CohomologyVerdict { status, max_period_checked: p_max })
}

/// Is `g` cohomologous to a combination of `basis`? Coefficients by least
/// squares over all orbit sums.
pub fn livsic_test_span(
    g: &Potential,
    basis: &[Potential],
    shift: &ShiftSpace,
    p_max: usize,
) -> Result<CohomologyVerdict> {
    let mem = basis.iter().map(|b| b.memory).chain([g.memory]).max().unwrap();
    if p_max < mem + 2 || basis.is_empty() {
        return Err(Error::Config("livsic span test needs a basis and p_max ≥ memory + 2".into()));
    }
    let orbits = orbit_representatives(shift, p_max);
    let a = DMatrix::from_fn(orbits.len(), basis.len(), |i, k| basis[k].periodic_sum(&orbits[i]));
    let y = DVector::from_iterator(orbits.len(), orbits.iter().map(|w| g.periodic_sum(w)));
    let svd = a.clone().svd(true, true);
    let c = svd.solve(&y, 1e-12).map_err(|e| Error::Convergence(e.to_string()))?;
    let r = &y - &a * &c;
    let (i, worst) = r.iter().enumerate().map(|(i, v)| (i, v.abs())).max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
    let status = if worst <= 1e-8 * orbits[i].len() as f64 {
        CohomologyStatus::CohomologousTo(c.iter().copied().collect())
    } else if worst > 1e-6 {
        CohomologyStatus::NotCohomologous(vec![OrbitWitness {
            word: orbits[i].clone(),
            coefficients: c.iter().copied().collect(),
            residual: r[i],
        }])
    } else {
        CohomologyStatus::Inconclusive
    };
    Ok(CohomologyVerdict { status, max_period_checked: p_max })
}

/// Centering and scaling of `U_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Case {
    /// `h₊ ~ a·F`: `(U − (a/E F)T²)/T`.
    A { a: f64, center: f64 },
    /// Otherwise: `(U − (E h₊/E F²)T²)/T^{3/2}`.
    B { center: f64 },
}

impl Case {
    pub fn normalize(&self, u: f64, t: f64) -> f64 {
        match *self {
            Case::A { center, .. } => (u - center * t * t) / t,
            Case::B { center } => (u - center * t * t) / t.powf(1.5),
        }
    }

    pub fn expected_slope(&self) -> f64 {
        match self {
            Case::A { .. } => 2.0,
            Case::B { .. } => 3.0,
        }
    }
}

/// Decides the case from the Hoeffding projection.
pub fn classify(k: &SymbolicKernel, chain: &GibbsChain, h: &HeightFunction) -> Result<(Case, CohomologyVerdict)> {
    let hp = hoeffding_projection(k, chain)?;
    let ef = chain.expectation(&h.f);
    let p_max = LIVSIC_P_MAX.max(hp.memory.max(h.f.memory) + 2);
    let verdict = livsic_test(&hp, &h.f, &chain.shift, p_max)?;
    let case = match verdict.a() {
        Some(a) => Case::A { a, center: a / ef },
        None => Case::B { center: chain.expectation(&hp) / (ef * ef) },
    };
    Ok((case, verdict))
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationLevel {
    pub t: f64,
    pub samples: Vec<UStatSample>,
    pub u_variance: f64,
    pub normalized: stats::Summary,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluctuationReport {
    pub case: Case,
    pub verdict: CohomologyVerdict,
    pub h3: H3Report,
    pub levels: Vec<FluctuationLevel>,
    pub regression: Regression,
    /// KS to a fitted Gaussian at the largest `T`.
    pub ks_gaussian: Option<KsResult>,
}

/// Samples `U_T` for a stationary start.
pub fn sample_u<R: Rng + ?Sized>(
    chain: &GibbsChain,
    k: &SymbolicKernel,
    f: &Potential,
    t: f64,
    rng: &mut R,
) -> UStatSample {
    let (mut x, fp) = sample_passage(chain, f, t, rng);
    let need = fp.tau + k.memory();
    if x.data.len() < need {
        let extra = need - x.data.len();
        chain.extend_forward(&mut x, extra, rng);
    }
    let u = u_sum(&x, k, fp.tau).expect("window extended");
    UStatSample { u, tau: fp.tau, overshoot: fp.overshoot, t, normalized: None }
}

/// Variance scaling and limit shape of `U_T`.
pub fn fluctuation_experiment(
    k: &SymbolicKernel,
    chain: &GibbsChain,
    h: &HeightFunction,
    ts: &[f64],
    n: usize,
    seed: u64,
) -> Result<FluctuationReport> {
    let h3 = verify_h3(k, chain, default_j_max(k), 0..=k.memory())?;
    if !h3.pass {
        return Err(Error::PrerequisiteFailed(format!("kernel decay slope {:?} is not negative", h3.slope)));
    }
    if !h.certificate.as_ref().is_some_and(|c| c.passed()) {
        return Err(Error::PrerequisiteFailed("height has no nonarithmetic certificate".into()));
    }
    let (case, verdict) = classify(k, chain, h)?;
    let mut levels = Vec::new();
    for (level, &t) in ts.iter().enumerate() {
        let samples: Vec<UStatSample> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = stream(seed, 20, ((level as u64) << 32) | i as u64);
                let mut s = sample_u(chain, k, &h.f, t, &mut r);
                s.normalized = Some(case.normalize(s.u, t));
                s
            })
            .collect();
        let u: Vec<f64> = samples.iter().map(|s| s.u).collect();
        let z: Vec<f64> = samples.iter().filter_map(|s| s.normalized).collect();
        levels.push(FluctuationLevel {
            t,
            u_variance: stats::summary(&u).variance,
            normalized: stats::summary(&z),
            samples,
        });
    }
    let vars: Vec<f64> = levels.iter().map(|l| l.u_variance).collect();
    let regression = stats::scaling_regression(ts, &vars)?;
    let ks_gaussian = match case {
        Case::B { .. } => levels.last().and_then(|l| {
            let z: Vec<f64> = l.samples.iter().filter_map(|s| s.normalized).collect();
            stats::ks_fitted_gaussian(&z).ok()
        }),
        Case::A { .. } => None,
    };
    Ok(FluctuationReport { case, verdict, h3, levels, regression, ks_gaussian })
}

/// Root of `θ ↦ Pr(−θF)`.
pub fn solve_theta(f: &Potential, shift: &ShiftSpace) -> Result<f64> {
    let (min_f, _) = f.range_on(shift);
    if !(min_f > 0.0) {
        return Err(Error::Config("height must be positive".into()));
    }
    let pr = |theta: f64| -> Result<f64> { crate::symdyn::pressure(shift, &f.scale(-theta)) };
    let (mut lo, mut hi) = (0.0, pr(0.0)? / min_f + 1e-9);
    let (plo, phi) = (pr(lo)?, pr(hi)?);
    if !(plo > 0.0 && phi <= 0.0) {
        return Err(Error::BracketFailure(format!("Pr(0) = {plo}, Pr(-{hi}F) = {phi}")));
    }
    while hi - lo > 1e-10 * hi {
        let mid = 0.5 * (lo + hi);
        if pr(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut theta = 0.5 * (lo + hi);
    for _ in 0..20 {
        let c = gibbs_from_potential(shift, &f.scale(-theta))?;
        if c.pressure.abs() <= 1e-12 {
            break;
        }
        // d/dθ Pr(−θF) = −E F under the current state.
        theta += c.pressure / c.expectation(f);
    }
    Ok(theta)
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodicEnsemble {
    pub t: f64,
    pub eps: f64,
    pub theta: f64,
    /// Periodic sequences, one period each; all rotations are members.
    pub members: Vec<Vec<u8>>,
    pub gate_bypassed: bool,
}

/// Is a periodic sum in `(T, T+ε]`, with the ends widened by [`ENSEMBLE_TOL`]?
pub fn in_window(s: f64, t: f64, eps: f64) -> bool {
    let tol = ENSEMBLE_TOL * t.abs().max(1.0);
    s > t + tol && s <= t + eps + tol
}

/// Periodic sequences of period `n` with `S_nF ∈ (T, T+ε]`.
pub fn periodic_ensemble(
    shift: &ShiftSpace,
    h: &HeightFunction,
    t: f64,
    eps: f64,
    bypass_gate: bool,
) -> Result<PeriodicEnsemble> {
    periodic_ensemble_capped(shift, h, t, eps, bypass_gate, ENSEMBLE_CAP)
}

pub fn periodic_ensemble_capped(
    shift: &ShiftSpace,
    h: &HeightFunction,
    t: f64,
    eps: f64,
    bypass_gate: bool,
    cap: usize,
) -> Result<PeriodicEnsemble> {
    if !(eps > 0.0 && eps < h.min) {
        return Err(Error::Config(format!("ε = {eps} must lie in (0, min F = {})", h.min)));
    }
    if !bypass_gate && !h.certificate.as_ref().is_some_and(|c| c.passed()) {
        return Err(Error::ArithmeticHeight);
    }
    let f = &h.f;
    let n_lo = ((t / h.max).floor() as usize).max(1);
    let n_hi = ((t + eps) / h.min).ceil() as usize;
    let mut members = Vec::new();
    for n in n_lo..=n_hi {
        // Depth-first over words; windows that wrap are summed at the end.
        let mut stack: Vec<(Vec<u8>, f64)> = (0..shift.q as u8).map(|s| (vec![s], 0.0)).collect();
        while let Some((w, partial)) = stack.pop() {
            if w.len() == n {
                if !shift.a[w[n - 1] as usize][w[0] as usize] {
                    continue;
                }
                if in_window(f.periodic_sum(&w), t, eps) {
                    members.push(w);
                    if members.len() > cap {
                        return Err(Error::BudgetExceeded(format!("more than {cap} ensemble members")));
                    }
                }
                continue;
            }
            let last = *w.last().unwrap();
            for s in (0..shift.q as u8).rev() {
                if !shift.a[last as usize][s as usize] {
                    continue;
                }
                let mut v = w.clone();
                v.push(s);
                let mut p = partial;
                if v.len() > f.memory {
                    p += f.value(&v[v.len() - f.memory - 1..]);
                }
                let done = v.len().saturating_sub(f.memory);
                if p + (n - done) as f64 * h.min > t + eps + 1e-6 {
                    continue;
                }
                stack.push((v, p));
            }
        }
    }
    members.sort();
    let theta = solve_theta(f, shift)?;
    Ok(PeriodicEnsemble { t, eps, theta, members, gate_bypassed: bypass_gate })
}

/// Periodic extension of one period over `[0, len)`.
pub fn periodic_window(w: &[u8], len: usize) -> BiSequence {
    BiSequence { start: 0, data: (0..len).map(|i| w[i % w.len()]).collect() }
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityRow {
    /// Coordinates in `[0, τ + m)` kept, the rest resampled.
    pub m: usize,
    pub quantiles: [f64; 5],
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub case: Case,
    pub ensemble: Vec<f64>,
    pub reference: Vec<f64>,
    pub reference_attempts: usize,
    pub ks: KsResult,
    pub stability: Vec<StabilityRow>,
}

/// `Ũ_T` uniformly over the ensemble against `Ũ_T` under `μ_{−θF}`
/// conditioned on `R_T ≤ ε`.
pub fn periodic_ustat_compare(
    ens: &PeriodicEnsemble,
    k: &SymbolicKernel,
    h: &HeightFunction,
    chain: &GibbsChain,
    n_draws: usize,
    seed: u64,
) -> Result<CompareReport> {
    if ens.members.is_empty() {
        return Err(Error::InsufficientData("empty ensemble".into()));
    }
    let h3 = verify_h3(k, chain, default_j_max(k), 0..=k.memory())?;
    if !h3.pass {
        return Err(Error::PrerequisiteFailed("kernel fails the decay check".into()));
    }
    let (case, _) = classify(k, chain, h)?;
    let (t, m) = (ens.t, k.memory());
    let member_u = |w: &[u8]| -> Result<f64> {
        let x = periodic_window(w, w.len() + m + h.f.memory + 1);
        let s = u_statistic(&x, k, &h.f, t)?;
        debug_assert_eq!(s.tau, w.len());
        Ok(case.normalize(s.u, t))
    };
    let mut pick = stream(seed, 30, 0);
    let picks: Vec<usize> = (0..n_draws).map(|_| pick.random_range(0..ens.members.len())).collect();
    let ensemble = picks.iter().map(|&i| member_u(&ens.members[i])).collect::<Result<Vec<_>>>()?;
    // Rejection sampling in parallel batches, kept in index order.
    let mut reference = Vec::with_capacity(n_draws);
    let mut attempts = 0usize;
    let batch = 4 * n_draws.max(1);
    while reference.len() < n_draws {
        let got: Vec<Option<f64>> = (attempts..attempts + batch)
            .into_par_iter()
            .map(|i| {
                let mut r = stream(seed, 31, i as u64);
                let s = sample_u(chain, k, &h.f, t, &mut r);
                // Same widened window as the ensemble, or lattice sums get split by roundoff.
                in_window(t + s.overshoot, t, ens.eps).then(|| case.normalize(s.u, t))
            })
            .collect();
        attempts += batch;
        reference.extend(got.into_iter().flatten().take(n_draws - reference.len()));
        if attempts > 1000 * n_draws.max(1) {
            return Err(Error::BudgetExceeded("conditioned reference sampling".into()));
        }
    }
    let ks = stats::ks_two_sample(&ensemble, &reference)?;
    let stability = (0..=m)
        .map(|keep| {
            let mut r = stream(seed, 32, keep as u64);
            let mut dev = Vec::new();
            for &i in picks.iter().take(200) {
                let w = &ens.members[i];
                let base = member_u(w)?;
                let mut x = periodic_window(w, (w.len() + keep).max(chain.block));
                if !chain.shift.admissible(&x.data) {
                    continue;
                }
                let extra = w.len() + m + 1 - x.data.len().min(w.len() + m + 1);
                chain.extend_forward(&mut x, extra, &mut r);
                let s = u_sum(&x, k, w.len())?;
                dev.push((case.normalize(s, t) - base).abs());
            }
            let mut sorted = dev;
            sorted.sort_by(f64::total_cmp);
            Ok(StabilityRow { m: keep, quantiles: stats::QUANTILE_LEVELS.map(|p| stats::quantile_sorted(&sorted, p)) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CompareReport { case, ensemble, reference, reference_attempts: attempts, ks, stability })
}
