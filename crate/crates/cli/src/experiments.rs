//! The named experiments. Each one produces a raw table; its summary and
//! verdict are computed from that table (as read back from CSV) and the config.

use std::f64::consts::FRAC_PI_4;

use anyhow::{anyhow, Result};
use geolab::closedgeo::{band_statistics, closed_geodesic_from_word, enumerate_closed_geodesics, CensusConfig};
use geolab::rng::stream;
use geolab::stats::{ks_fitted_gaussian, ks_one_sample, ks_two_sample, scaling_regression, summary, Summary};
use geolab::surface::{build_genus2_surface, GroupWord, Surface};
use geolab::suspension::{clt_experiment, overshoot_experiment, HeightFunction, OvershootLaw};
use geolab::symdyn::{gibbs_from_potential, GibbsChain, Potential, ShiftSpace};
use geolab::tracer::{
    count_self_intersections, discretized_markov_operator, kernel_row_integral, sample_liouville, trace_geodesic,
    GridSpec, KernelContext,
};
use geolab::ustat::{
    classify, fluctuation_experiment, periodic_ensemble, periodic_ustat_compare, solve_theta, Case, SymbolicKernel,
};
use geolab::Error;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::table::{Cell, Frame, Table};

pub const EXPERIMENTS: [&str; 10] = [
    "surface-lln",
    "kernel-markov",
    "operator-gap",
    "closed-census",
    "closed-fluct",
    "gibbs-diag",
    "renewal",
    "clt",
    "ustat-fluct",
    "periodic-compare",
];

pub struct Outcome {
    pub stats: Value,
    pub pass: bool,
}

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn params<P: DeserializeOwned>(t: &toml::Table) -> Result<P> {
    toml::Value::Table(t.clone()).try_into().map_err(|e: toml::de::Error| config_err(e.message().to_string()))
}

fn check(name: &str) -> Result<()> {
    if EXPERIMENTS.contains(&name) {
        Ok(())
    } else {
        Err(config_err(format!("unknown experiment {name:?}; expected one of {}", EXPERIMENTS.join(", "))))
    }
}

/// Parses the parameters without running anything.
pub fn validate(name: &str, p: &toml::Table) -> Result<()> {
    check(name)?;
    match name {
        "surface-lln" => params::<SurfaceLln>(p).map(drop),
        "kernel-markov" => params::<KernelMarkov>(p).and_then(|k| k.pairwise_index().map(drop)),
        "operator-gap" => params::<OperatorGap>(p).map(drop),
        "closed-census" => params::<ClosedCensus>(p).map(drop),
        "closed-fluct" => params::<ClosedFluct>(p).and_then(|c| c.check()),
        "gibbs-diag" => params::<GibbsDiag>(p).and_then(|g| g.shift().map(drop)),
        "renewal" => params::<Renewal>(p).map(drop),
        "clt" => params::<Clt>(p).and_then(|c| c.observables().map(drop)),
        "ustat-fluct" => params::<UstatFluct>(p).and_then(|u| u.kernel(&height(FRAC_PI_4)).map(drop)),
        "periodic-compare" => params::<PeriodicCompare>(p).map(drop),
        _ => unreachable!(),
    }
}

pub fn run(name: &str, p: &toml::Table, seed: u64) -> Result<Table> {
    check(name)?;
    match name {
        "surface-lln" => run_surface_lln(params(p)?, seed),
        "kernel-markov" => run_kernel_markov(params(p)?, seed),
        "operator-gap" => run_operator_gap(params(p)?, seed),
        "closed-census" => run_closed_census(params(p)?),
        "closed-fluct" => run_closed_fluct(params(p)?, seed),
        "gibbs-diag" => run_gibbs_diag(params(p)?, seed),
        "renewal" => run_renewal(params(p)?, seed),
        "clt" => run_clt(params(p)?, seed),
        "ustat-fluct" => run_ustat_fluct(params(p)?, seed),
        "periodic-compare" => run_periodic_compare(params(p)?, seed),
        _ => unreachable!(),
    }
}

pub fn summarize(name: &str, p: &toml::Table, seed: u64, f: &Frame) -> Result<Outcome> {
    check(name)?;
    match name {
        "surface-lln" => sum_surface_lln(params(p)?, f),
        "kernel-markov" => sum_kernel_markov(params(p)?, f),
        "operator-gap" => sum_operator_gap(f),
        "closed-census" => sum_closed_census(params(p)?, f),
        "closed-fluct" => sum_closed_fluct(params(p)?, f),
        "gibbs-diag" => sum_gibbs_diag(params(p)?, seed, f),
        "renewal" => sum_renewal(params(p)?, f),
        "clt" => sum_clt(params(p)?, f),
        "ustat-fluct" => sum_ustat_fluct(params(p)?, f),
        "periodic-compare" => sum_periodic_compare(params(p)?, f),
        _ => unreachable!(),
    }
}

fn surface() -> Result<Surface> {
    Ok(build_genus2_surface()?)
}

fn uniform2() -> Result<GibbsChain> {
    Ok(gibbs_from_potential(&ShiftSpace::full(2), &Potential::constant(2, 0.0))?)
}

/// `1 + c·[x₀ = 1]` on the full 2-shift, with its arithmetic certificate.
fn height(c: f64) -> HeightFunction {
    let h = HeightFunction::two_valued(c);
    h.clone().certified(&ShiftSpace::full(2), 8).unwrap_or(h)
}

fn summary_json(s: &Summary) -> Value {
    json!({ "n": s.n, "mean": s.mean, "variance": s.variance, "stderr": s.stderr(), "skewness": s.skewness, "quantiles": s.quantiles })
}

/// Pooled mean and standard error of independent estimates.
fn pooled(values: &[f64], stderrs: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    (values.iter().sum::<f64>() / n, stderrs.iter().map(|s| s * s).sum::<f64>().sqrt() / n)
}

fn kernel_rows(t: &mut Table, s: &Surface, delta: f64, points: usize, samples: usize, seed: u64) -> Result<()> {
    let ctx = KernelContext::new(s, delta)?;
    let rows = (0..points as u64)
        .into_par_iter()
        .map(|i| {
            let u = sample_liouville(&mut stream(seed, 80, i), s);
            kernel_row_integral(&ctx, &u, samples, &mut stream(seed, 81, i))
        })
        .collect::<geolab::Result<Vec<_>>>()?;
    for (i, r) in rows.iter().enumerate() {
        let k = r.intensity();
        t.push(vec![
            "kernel".into(),
            i.into(),
            0.0.into(),
            0.into(),
            k.kappa_hat.into(),
            k.stderr.into(),
            r.degenerate.into(),
        ]);
    }
    Ok(())
}

fn kernel_kappa(f: &Frame) -> Result<(f64, f64)> {
    let v = f.f64s(f.rows("kernel"), "value")?;
    let se = f.f64s(f.rows("kernel"), "stderr")?;
    if v.is_empty() {
        return Err(anyhow!(Error::InsufficientData("no kernel rows".into())));
    }
    Ok(pooled(&v, &se))
}

const GEO_HEADERS: [&str; 7] = ["source", "index", "length", "count", "value", "stderr", "degenerate"];

// ---------------------------------------------------------------- surface-lln

fn d_delta() -> f64 {
    0.05
}
fn d_points() -> usize {
    10
}
fn d_kernel_samples() -> usize {
    10_000
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SurfaceLln {
    t: f64,
    samples: usize,
    #[serde(default = "d_delta")]
    delta: f64,
    #[serde(default = "d_points")]
    kernel_points: usize,
    #[serde(default = "d_kernel_samples")]
    kernel_samples: usize,
}

fn run_surface_lln(p: SurfaceLln, seed: u64) -> Result<Table> {
    let s = surface()?;
    let runs = (0..p.samples as u64)
        .into_par_iter()
        .map(|i| {
            let u = sample_liouville(&mut stream(seed, 85, i), &s);
            let c = trace_geodesic(&u, p.t, &s)?;
            let rec = count_self_intersections(&c, &s);
            Ok((rec.count, rec.degenerate_count))
        })
        .collect::<geolab::Result<Vec<_>>>()?;
    let mut t = Table::new(&GEO_HEADERS);
    for (i, (n, d)) in runs.into_iter().enumerate() {
        t.push(vec![
            "geodesic".into(),
            i.into(),
            p.t.into(),
            n.into(),
            (n as f64 / (p.t * p.t)).into(),
            0.0.into(),
            d.into(),
        ]);
    }
    kernel_rows(&mut t, &s, p.delta, p.kernel_points, p.kernel_samples, seed)?;
    Ok(t)
}

fn sum_surface_lln(_: SurfaceLln, f: &Frame) -> Result<Outcome> {
    let st = summary(&f.f64s(f.rows("geodesic"), "value")?);
    let degenerate: usize = f.usizes(f.rows("geodesic"), "degenerate")?.iter().sum();
    let (k, kse) = kernel_kappa(f)?;
    let z = (st.mean - k) / (st.stderr().powi(2) + kse * kse).sqrt();
    Ok(Outcome {
        pass: z.abs() <= 3.0 && degenerate == 0,
        stats: json!({
            "n_over_t2": summary_json(&st),
            "kappa_hat": { "value": k, "stderr": kse },
            "z": z,
            "degenerate_count": degenerate,
        }),
    })
}

// -------------------------------------------------------------- kernel-markov

fn d_deltas() -> Vec<f64> {
    vec![0.02, 0.05, 0.1]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct KernelMarkov {
    #[serde(default = "d_delta")]
    delta: f64,
    #[serde(default = "d_deltas")]
    deltas: Vec<f64>,
    #[serde(default = "d_points")]
    points: usize,
    #[serde(default = "d_kernel_samples")]
    samples: usize,
}

impl KernelMarkov {
    fn pairwise_index(&self) -> Result<usize> {
        if self.points < 2 {
            return Err(config_err("kernel-markov needs at least 2 points"));
        }
        self.deltas.iter().position(|&d| d == self.delta).ok_or_else(|| config_err("delta must be one of deltas"))
    }
}

fn run_kernel_markov(p: KernelMarkov, seed: u64) -> Result<Table> {
    p.pairwise_index()?;
    let s = surface()?;
    let mut t = Table::new(&["delta", "point", "estimate", "stderr", "hits", "degenerate"]);
    for (k, &d) in p.deltas.iter().enumerate() {
        let ctx = KernelContext::new(&s, d)?;
        let rows = (0..p.points as u64)
            .into_par_iter()
            .map(|i| {
                // Same directions at every δ, fresh neighbors.
                let u = sample_liouville(&mut stream(seed, 80, i), &s);
                kernel_row_integral(&ctx, &u, p.samples, &mut stream(seed, 90 + k as u16, i))
            })
            .collect::<geolab::Result<Vec<_>>>()?;
        for (i, r) in rows.iter().enumerate() {
            t.push(vec![d.into(), i.into(), r.estimate.into(), r.stderr.into(), r.hits.into(), r.degenerate.into()]);
        }
    }
    Ok(t)
}

fn sum_kernel_markov(p: KernelMarkov, f: &Frame) -> Result<Outcome> {
    let main = p.pairwise_index()?;
    let delta = f.f64s(f.records.iter(), "delta")?;
    let est = f.f64s(f.records.iter(), "estimate")?;
    let se = f.f64s(f.records.iter(), "stderr")?;
    let at = |d: f64| -> Vec<(f64, f64)> {
        delta.iter().zip(est.iter().zip(&se)).filter(|(x, _)| **x == d).map(|(_, (e, s))| (*e, *s)).collect()
    };
    let rows = at(p.deltas[main]);
    let mut worst = 0.0f64;
    for (i, a) in rows.iter().enumerate() {
        for b in &rows[i + 1..] {
            worst = worst.max((a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt());
        }
    }
    let scaled: Vec<(f64, f64)> = p
        .deltas
        .iter()
        .map(|&d| {
            let r = at(d);
            let (m, s) = pooled(&r.iter().map(|x| x.0).collect::<Vec<_>>(), &r.iter().map(|x| x.1).collect::<Vec<_>>());
            (m / (d * d), s / (d * d))
        })
        .collect();
    let mut worst_scale = 0.0f64;
    for i in 0..scaled.len() {
        for j in i + 1..scaled.len() {
            let (a, b) = (scaled[i], scaled[j]);
            worst_scale = worst_scale.max((a.0 - b.0).abs() / (a.1 * a.1 + b.1 * b.1).sqrt());
        }
    }
    Ok(Outcome {
        pass: worst <= 3.0 && worst_scale <= 3.0,
        stats: json!({
            "pairwise_delta": p.deltas[main],
            "worst_pairwise_z": worst,
            "row_over_delta2": p.deltas.iter().zip(&scaled).map(|(d, s)| json!({ "delta": d, "value": s.0, "stderr": s.1 })).collect::<Vec<_>>(),
            "worst_scaling_z": worst_scale,
        }),
    })
}

// --------------------------------------------------------------- operator-gap

fn d_op_delta() -> f64 {
    0.1
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OperatorGap {
    #[serde(default = "d_op_delta")]
    delta: f64,
    #[serde(default)]
    grid: GridSpec,
}

fn run_operator_gap(p: OperatorGap, seed: u64) -> Result<Table> {
    let rep = discretized_markov_operator(p.delta, p.grid, &surface()?, seed)?;
    let mut t = Table::new(&[
        "delta",
        "spatial_cells",
        "states",
        "lambda1",
        "lambda2_abs",
        "gap_ratio",
        "row_sum_error",
        "constant_residual",
        "iterations",
        "transitions",
    ]);
    t.push(vec![
        p.delta.into(),
        rep.spatial_cells.into(),
        rep.states.into(),
        rep.lambda1.into(),
        rep.lambda2_abs.into(),
        rep.gap_ratio.into(),
        rep.row_sum_error.into(),
        rep.constant_residual.into(),
        rep.iterations.into(),
        rep.transitions.into(),
    ]);
    Ok(t)
}

fn sum_operator_gap(f: &Frame) -> Result<Outcome> {
    let get = |c: &str| f.f64s(f.records.iter(), c).map(|v| v[0]);
    let (gap, resid) = (get("gap_ratio")?, get("constant_residual")?);
    Ok(Outcome {
        pass: gap < 0.9 && resid < 1e-12,
        stats: json!({
            "states": get("states")?,
            "lambda1": get("lambda1")?,
            "lambda2_abs": get("lambda2_abs")?,
            "gap_ratio": gap,
            "row_sum_error": get("row_sum_error")?,
            "constant_residual": resid,
        }),
    })
}

// -------------------------------------------------------------- closed-census

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClosedCensus {
    l_max: f64,
    entry_cap: Option<usize>,
}

fn census_config(cap: Option<usize>) -> CensusConfig {
    let mut c = CensusConfig::default();
    if let Some(n) = cap {
        c.entry_cap = n;
    }
    c
}

fn run_closed_census(p: ClosedCensus) -> Result<Table> {
    let s = surface()?;
    let census = enumerate_closed_geodesics(p.l_max, &s, &census_config(p.entry_cap))?;
    let mut t = Table::new(&["source", "word", "length", "trace", "n_self", "degenerate", "prime", "closure_residual"]);
    let gens = ["a", "b", "c", "d"]
        .iter()
        .map(|w| closed_geodesic_from_word(&GroupWord::parse(w)?, &s))
        .collect::<geolab::Result<Vec<_>>>()?;
    for (tag, g) in gens.iter().map(|g| ("generator", g)).chain(census.entries.iter().map(|g| ("census", g))) {
        t.push(vec![
            tag.into(),
            g.word.to_string().into(),
            g.length.into(),
            g.trace.into(),
            g.n_self.into(),
            g.degenerate.into(),
            (g.prime as usize).into(),
            g.closure_residual.into(),
        ]);
    }
    Ok(t)
}

fn sum_closed_census(p: ClosedCensus, f: &Frame) -> Result<Outcome> {
    let lengths = f.f64s(f.rows("census"), "length")?;
    let gens = f.usizes(f.rows("generator"), "n_self")?;
    let degenerate: usize = f.usizes(f.records.iter(), "degenerate")?.iter().sum();
    let l_top = p.l_max.floor() as usize;
    let counts: Vec<Value> =
        (1..=l_top).map(|l| json!({ "l": l, "count": lengths.iter().filter(|&&x| x <= l as f64).count() })).collect();
    Ok(Outcome {
        pass: gens.iter().all(|&n| n == 0) && degenerate == 0,
        stats: json!({
            "primes": lengths.len(),
            "systole": lengths.iter().copied().fold(f64::INFINITY, f64::min),
            "counts": counts,
            "generator_self_intersections": gens,
            "degenerate_count": degenerate,
        }),
    })
}

// --------------------------------------------------------------- closed-fluct

fn d_l_max() -> f64 {
    6.0
}
fn d_bands() -> Vec<[f64; 2]> {
    vec![[4.0, 5.0], [5.0, 6.0]]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClosedFluct {
    #[serde(default = "d_l_max")]
    l_max: f64,
    #[serde(default = "d_bands")]
    bands: Vec<[f64; 2]>,
    /// Fixed crossing intensity; estimated from kernel rows when absent.
    kappa: Option<f64>,
    #[serde(default = "d_delta")]
    delta: f64,
    #[serde(default = "d_points")]
    kernel_points: usize,
    #[serde(default = "d_kernel_samples")]
    kernel_samples: usize,
}

impl ClosedFluct {
    fn check(&self) -> Result<()> {
        if self.bands.len() < 2 {
            return Err(config_err("closed-fluct needs at least two bands"));
        }
        Ok(())
    }
}

fn run_closed_fluct(p: ClosedFluct, seed: u64) -> Result<Table> {
    p.check()?;
    let s = surface()?;
    let census = enumerate_closed_geodesics(p.l_max, &s, &CensusConfig::default())?;
    let mut t = Table::new(&GEO_HEADERS);
    for (i, g) in census.entries.iter().enumerate() {
        t.push(vec![
            "census".into(),
            i.into(),
            g.length.into(),
            g.n_self.into(),
            0.0.into(),
            0.0.into(),
            g.degenerate.into(),
        ]);
    }
    if p.kappa.is_none() {
        kernel_rows(&mut t, &s, p.delta, p.kernel_points, p.kernel_samples, seed)?;
    }
    Ok(t)
}

fn sum_closed_fluct(p: ClosedFluct, f: &Frame) -> Result<Outcome> {
    p.check()?;
    let (kappa, kse) = match p.kappa {
        Some(k) => (k, 0.0),
        None => kernel_kappa(f)?,
    };
    let lengths = f.f64s(f.rows("census"), "length")?;
    let counts = f.usizes(f.rows("census"), "count")?;
    let pairs: Vec<(f64, usize)> = lengths.into_iter().zip(counts).collect();
    let bands: Vec<(f64, f64)> = p.bands.iter().map(|b| (b[0], b[1])).collect();
    let stats = band_statistics(&pairs, &bands, kappa)?;
    let decreasing = stats.windows(2).all(|w| w[1].relative_deviation < w[0].relative_deviation);
    let vars: Vec<f64> = stats.iter().map(|b| b.var_normalized).collect();
    let (lo, hi) = vars.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &v| (a.min(v), b.max(v)));
    let within3 = lo > 0.0 && hi / lo <= 3.0;
    Ok(Outcome {
        pass: decreasing && within3,
        stats: json!({
            "kappa": { "value": kappa, "stderr": kse },
            "bands": stats.iter().map(|b| json!({
                "lo": b.lo, "hi": b.hi, "count": b.count, "mean_ratio": b.mean_ratio,
                "relative_deviation": b.relative_deviation, "mean_normalized": b.mean_normalized,
                "var_normalized": b.var_normalized, "quantiles": b.quantiles,
            })).collect::<Vec<_>>(),
            "deviation_decreasing": decreasing,
            "variance_within_factor_3": within3,
        }),
    })
}

// ----------------------------------------------------------------- gibbs-diag

fn d_shift() -> String {
    "golden-mean".into()
}
fn d_two() -> usize {
    2
}
fn d_one() -> f64 {
    1.0
}
fn d_max_len() -> usize {
    10
}
fn d_mixing_n() -> usize {
    20
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GibbsDiag {
    #[serde(default = "d_shift")]
    shift: String,
    #[serde(default = "d_two")]
    q: usize,
    #[serde(default = "d_two")]
    memory: usize,
    #[serde(default = "d_one")]
    scale: f64,
    #[serde(default = "d_max_len")]
    max_len: usize,
    #[serde(default = "d_mixing_n")]
    mixing_n: usize,
}

impl GibbsDiag {
    fn shift(&self) -> Result<ShiftSpace> {
        match self.shift.as_str() {
            "golden-mean" => Ok(ShiftSpace::golden_mean()),
            "full" => Ok(ShiftSpace::full(self.q)),
            s => Err(config_err(format!("unknown shift {s:?}; expected golden-mean or full"))),
        }
    }

    fn chain(&self, seed: u64) -> Result<GibbsChain> {
        let shift = self.shift()?;
        let phi = Potential::random(shift.q, self.memory, self.scale, &mut stream(seed, 2, 0));
        Ok(gibbs_from_potential(&shift, &phi)?)
    }
}

fn run_gibbs_diag(p: GibbsDiag, seed: u64) -> Result<Table> {
    let chain = p.chain(seed)?;
    let mut t = Table::new(&["source", "word", "length", "measure", "ratio"]);
    for len in 1..=p.max_len {
        for w in chain.shift.words(len) {
            let word: String = w.iter().map(|s| char::from(b'0' + s)).collect();
            t.push(vec![
                "cylinder".into(),
                word.into(),
                len.into(),
                chain.cylinder_measure(&w)?.into(),
                chain.gibbs_ratio(&w)?.into(),
            ]);
        }
    }
    let q = chain.q();
    let rep = chain.mixing_check(&Potential::indicator(q, 0), &Potential::indicator(q, (q - 1) as u8), p.mixing_n)?;
    for (n, c) in rep.covariances.iter().enumerate() {
        t.push(vec!["covariance".into(), "".into(), n.into(), (*c).into(), 0.0.into()]);
    }
    Ok(t)
}

fn sum_gibbs_diag(p: GibbsDiag, seed: u64, f: &Frame) -> Result<Outcome> {
    let chain = p.chain(seed)?;
    let ratios = f.f64s(f.rows("cylinder"), "ratio")?;
    let lens = f.usizes(f.rows("cylinder"), "length")?;
    let mass = f.f64s(f.rows("cylinder"), "measure")?;
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    let mass_error = (1..=p.max_len)
        .map(|l| (lens.iter().zip(&mass).filter(|(n, _)| **n == l).map(|(_, m)| m).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let cov = f.f64s(f.rows("covariance"), "measure")?;
    let pts: Vec<(f64, f64)> = cov
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, c)| c.abs() > 1e-15)
        .map(|(n, c)| (n as f64, c.abs().ln()))
        .collect();
    let beta_hat = if pts.len() >= 2 {
        let ts: Vec<f64> = pts.iter().map(|p| p.0.exp()).collect();
        let vs: Vec<f64> = pts.iter().map(|p| p.1.exp()).collect();
        scaling_regression(&ts, &vs).map(|r| r.slope.exp()).unwrap_or(0.0)
    } else {
        0.0
    };
    Ok(Outcome {
        pass: lo > 0.0 && hi / lo < 1e3 && mass_error < 1e-12,
        stats: json!({
            "pressure": chain.pressure,
            "states": chain.states.len(),
            "c1": lo,
            "c2": hi,
            "c2_over_c1": hi / lo,
            "cylinder_mass_error": mass_error,
            "gap_ratio": chain.gap_ratio,
            "covariance_decay": beta_hat,
        }),
    })
}

// -------------------------------------------------------------------- renewal

fn d_step() -> f64 {
    FRAC_PI_4
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Renewal {
    t: f64,
    n: usize,
    #[serde(default = "d_step")]
    height_step: f64,
}

fn run_renewal(p: Renewal, seed: u64) -> Result<Table> {
    let rep = overshoot_experiment(&uniform2()?, &height(p.height_step), p.t, p.n, seed)?;
    let mut t = Table::new(&["index", "tau", "overshoot", "before"]);
    for (i, s) in rep.samples.iter().enumerate() {
        t.push(vec![i.into(), s.tau.into(), s.overshoot.into(), s.before.into()]);
    }
    Ok(t)
}

fn sum_renewal(p: Renewal, f: &Frame) -> Result<Outcome> {
    let law = OvershootLaw::new(&uniform2()?, &height(p.height_step).f);
    let r = f.f64s(f.records.iter(), "overshoot")?;
    let ks = ks_one_sample(&r, |v| law.cdf(v))?;
    let mass = law.density_mass();
    Ok(Outcome {
        pass: ks.statistic < 0.05 && (mass - 1.0).abs() < 1e-10,
        stats: json!({
            "overshoot": summary_json(&summary(&r)),
            "limit_mean": law.mean(),
            "ks": ks,
            "density_mass": mass,
        }),
    })
}

// ------------------------------------------------------------------------ clt

fn d_observables() -> Vec<String> {
    vec!["height".into()]
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Clt {
    ts: Vec<f64>,
    n: usize,
    #[serde(default = "d_step")]
    height_step: f64,
    #[serde(default = "d_observables")]
    observables: Vec<String>,
}

/// Named observables on the full 2-shift.
fn observable(name: &str, h: &HeightFunction) -> Result<Potential> {
    match name {
        "height" => Ok(h.f.clone()),
        "symbol1" => Ok(Potential::indicator(2, 1)),
        "pattern01" => Ok(Potential::from_fn(2, 1, |w| (w[0] == 0 && w[1] == 1) as u8 as f64)),
        s => Err(config_err(format!("unknown observable {s:?}; expected height, symbol1 or pattern01"))),
    }
}

impl Clt {
    fn observables(&self) -> Result<Vec<Potential>> {
        let h = height(self.height_step);
        self.observables.iter().map(|o| observable(o, &h)).collect()
    }
}

fn run_clt(p: Clt, seed: u64) -> Result<Table> {
    let g = p.observables()?;
    let rep = clt_experiment(&uniform2()?, &height(p.height_step), &g, &p.ts, p.n, seed)?;
    let mut headers = vec!["t".to_string(), "index".into(), "tau_normalized".into()];
    headers.extend(p.observables.iter().map(|o| format!("g_{o}")));
    let mut t = Table { headers, rows: Vec::new() };
    for level in &rep.levels {
        for (i, (tau, gs)) in level.rows.iter().enumerate() {
            let mut row: Vec<Cell> = vec![level.t.into(), i.into(), (*tau).into()];
            row.extend(gs.iter().map(|&v| Cell::F(v)));
            t.push(row);
        }
    }
    Ok(t)
}

fn sum_clt(p: Clt, f: &Frame) -> Result<Outcome> {
    let ts = f.f64s(f.records.iter(), "t")?;
    let mut levels = Vec::new();
    let mut pass = true;
    let mut height_vars = Vec::new();
    for &t in &p.ts {
        let rows = || f.records.iter().zip(&ts).filter(move |(_, x)| **x == t).map(|(r, _)| r);
        let tau = f.f64s(rows(), "tau_normalized")?;
        let ks = ks_fitted_gaussian(&tau)?;
        pass &= ks.statistic < 0.05;
        let mut obs = serde_json::Map::new();
        for o in &p.observables {
            let v = f.f64s(rows(), &format!("g_{o}"))?;
            let s = summary(&v);
            if o == "height" {
                height_vars.push(s.variance);
            }
            obs.insert(o.clone(), summary_json(&s));
        }
        levels.push(json!({ "t": t, "tau": summary_json(&summary(&tau)), "tau_ks": ks, "observables": obs }));
    }
    // Along g = F the normalized sum only carries the overshoot, so it shrinks like 1/T.
    let collapse = match (height_vars.first(), height_vars.last(), p.ts.first(), p.ts.last()) {
        (Some(a), Some(b), Some(t0), Some(t1)) if t1 / t0 >= 4.0 => {
            pass &= a / b >= 2.0;
            Some(a / b)
        }
        _ => None,
    };
    Ok(Outcome { pass, stats: json!({ "levels": levels, "height_variance_ratio": collapse }) })
}

// ---------------------------------------------------------------- ustat-fluct

fn d_ts() -> Vec<f64> {
    vec![250.0, 500.0, 1000.0, 2000.0]
}
fn d_kernel() -> String {
    "product".into()
}
fn d_g() -> String {
    "pattern01".into()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UstatFluct {
    #[serde(default = "d_ts")]
    ts: Vec<f64>,
    n: usize,
    #[serde(default = "d_step")]
    height_step: f64,
    #[serde(default = "d_kernel")]
    kernel: String,
    #[serde(default = "d_g")]
    g: String,
}

fn kernel_named(kind: &str, g: &str, h: &HeightFunction) -> Result<SymbolicKernel> {
    match kind {
        "product" => Ok(SymbolicKernel::product(&observable(g, h)?)),
        "additive" => Ok(SymbolicKernel::additive(&observable(g, h)?)),
        s => Err(config_err(format!("unknown kernel {s:?}; expected product or additive"))),
    }
}

impl UstatFluct {
    /// The product kernel defaults to `F⊗F`.
    fn kernel(&self, h: &HeightFunction) -> Result<SymbolicKernel> {
        let g = if self.kernel == "product" && self.g == d_g() { "height" } else { &self.g };
        kernel_named(&self.kernel, g, h)
    }
}

fn run_ustat_fluct(p: UstatFluct, seed: u64) -> Result<Table> {
    let h = height(p.height_step);
    let rep = fluctuation_experiment(&p.kernel(&h)?, &uniform2()?, &h, &p.ts, p.n, seed)?;
    let mut t = Table::new(&["t", "index", "u", "tau", "overshoot", "normalized"]);
    for level in &rep.levels {
        for (i, s) in level.samples.iter().enumerate() {
            let z = s.normalized.unwrap_or(f64::NAN);
            t.push(vec![level.t.into(), i.into(), s.u.into(), s.tau.into(), s.overshoot.into(), z.into()]);
        }
    }
    Ok(t)
}

fn case_json(c: &Case) -> Value {
    match *c {
        Case::A { a, center } => json!({ "case": "A", "a": a, "center": center }),
        Case::B { center } => json!({ "case": "B", "center": center }),
    }
}

fn sum_ustat_fluct(p: UstatFluct, f: &Frame) -> Result<Outcome> {
    let h = height(p.height_step);
    let chain = uniform2()?;
    let (case, _) = classify(&p.kernel(&h)?, &chain, &h)?;
    let ts = f.f64s(f.records.iter(), "t")?;
    let rows = |t: f64| f.records.iter().zip(&ts).filter(move |(_, x)| **x == t).map(|(r, _)| r);
    let vars = p.ts.iter().map(|&t| f.f64s(rows(t), "u").map(|u| summary(&u).variance)).collect::<Result<Vec<_>>>()?;
    let reg = scaling_regression(&p.ts, &vars)?;
    let last = *p.ts.last().ok_or_else(|| config_err("ts is empty"))?;
    let z = f.f64s(rows(last), "normalized")?;
    let ks = match case {
        Case::A { .. } => {
            let law = OvershootLaw::new(&chain, &h.f);
            ks_one_sample(&z, |v| law.cdf(v / 2.0))?
        }
        Case::B { .. } => ks_fitted_gaussian(&z)?,
    };
    let expected = case.expected_slope();
    Ok(Outcome {
        pass: (reg.slope - expected).abs() <= 0.4 && ks.statistic < 0.05,
        stats: json!({
            "case": case_json(&case),
            "variance_slope": reg.slope,
            "slope_ci": reg.ci,
            "expected_slope": expected,
            "ks": ks,
            "ks_reference": if matches!(case, Case::A { .. }) { "twice the overshoot law" } else { "fitted Gaussian" },
        }),
    })
}

// ----------------------------------------------------------- periodic-compare

fn d_pc_t() -> f64 {
    12.0
}
fn d_eps() -> f64 {
    0.2
}
fn d_growth() -> Vec<f64> {
    vec![8.0, 10.0, 12.0, 14.0]
}
fn d_draws() -> usize {
    500
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PeriodicCompare {
    #[serde(default = "d_pc_t")]
    t: f64,
    #[serde(default = "d_eps")]
    eps: f64,
    #[serde(default = "d_step")]
    height_step: f64,
    /// Allows lattice heights, whose periodic sums sit on a grid.
    #[serde(default)]
    bypass_gate: bool,
    #[serde(default = "d_growth")]
    growth_ts: Vec<f64>,
    #[serde(default = "d_draws")]
    n_draws: usize,
    #[serde(default = "d_kernel")]
    kernel: String,
    #[serde(default = "d_g")]
    g: String,
}

fn run_periodic_compare(p: PeriodicCompare, seed: u64) -> Result<Table> {
    let full = ShiftSpace::full(2);
    let h = height(p.height_step);
    let ens = periodic_ensemble(&full, &h, p.t, p.eps, p.bypass_gate)?;
    let theta = solve_theta(&h.f, &full)?;
    let chain = gibbs_from_potential(&full, &h.f.scale(-theta))?;
    let g = if p.kernel == "product" && p.g == d_g() { "height" } else { &p.g };
    let rep = periodic_ustat_compare(&ens, &kernel_named(&p.kernel, g, &h)?, &h, &chain, p.n_draws, seed)?;
    let mut t = Table::new(&["source", "t", "value"]);
    for &gt in &p.growth_ts {
        let n = periodic_ensemble(&full, &h, gt, p.eps, p.bypass_gate)?.members.len();
        t.push(vec!["count".into(), gt.into(), (n as f64).into()]);
    }
    for (tag, vals) in [("ensemble", &rep.ensemble), ("reference", &rep.reference)] {
        for &v in vals.iter() {
            t.push(vec![tag.into(), p.t.into(), v.into()]);
        }
    }
    Ok(t)
}

fn sum_periodic_compare(p: PeriodicCompare, f: &Frame) -> Result<Outcome> {
    let theta = solve_theta(&height(p.height_step).f, &ShiftSpace::full(2))?;
    let ts = f.f64s(f.rows("count"), "t")?;
    let counts = f.f64s(f.rows("count"), "value")?;
    let slope = scaling_regression(&ts.iter().map(|t| t.exp()).collect::<Vec<_>>(), &counts)?.slope;
    let rel = (slope - theta).abs() / theta;
    let ks = ks_two_sample(&f.f64s(f.rows("ensemble"), "value")?, &f.f64s(f.rows("reference"), "value")?)?;
    Ok(Outcome {
        pass: rel <= 0.1 && ks.p_value > 0.01,
        stats: json!({
            "theta": theta,
            "growth_slope": slope,
            "relative_error": rel,
            "ks": ks,
            "gate_bypassed": p.bypass_gate,
        }),
    })
}
