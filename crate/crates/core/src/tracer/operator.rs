//! Finite-state approximation of the averaging operator of the normalized
//! intersection kernel on the unit tangent bundle.

use super::sample_liouville;
use crate::error::{Error, Result};
use crate::hypgeo::{dist_from_origin, UnitTangent};
use crate::rng::stream;
use crate::surface::Surface;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::{PI, TAU};

/// Polar grid over the polygon times direction bins.
///
/// Rings are equal-area annuli (cosh ρ equally spaced up to the circumradius),
/// each cut into `sectors` equal angles; cells outside the polygon are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rings: usize,
    pub sectors: usize,
    pub direction_bins: usize,
    /// Transitions sampled per state, on average.
    pub samples_per_state: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { rings: 12, sectors: 64, direction_bins: 24, samples_per_state: 100 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub spatial_cells: usize,
    pub states: usize,
    pub lambda1: f64,
    pub lambda2_abs: f64,
    pub gap_ratio: f64,
    /// `max |row sum − 1|`.
    pub row_sum_error: f64,
    /// `‖M·1 − 1‖∞`.
    pub constant_residual: f64,
    pub iterations: usize,
    pub transitions: usize,
}

struct Grid<'a> {
    spec: GridSpec,
    cosh_r: f64,
    s: &'a Surface,
}

impl Grid<'_> {
    fn spatial(&self, u: &UnitTangent) -> usize {
        let z = u.base.z;
        let ch = dist_from_origin(z).cosh();
        let ring = (((ch - 1.0) / (self.cosh_r - 1.0)) * self.spec.rings as f64) as usize;
        let ang = z.im.atan2(z.re).rem_euclid(TAU);
        let sector = ((ang / TAU) * self.spec.sectors as f64) as usize;
        ring.min(self.spec.rings - 1) * self.spec.sectors + sector.min(self.spec.sectors - 1)
    }

    fn state(&self, u: &UnitTangent) -> usize {
        let d = ((u.direction / TAU) * self.spec.direction_bins as f64) as usize;
        self.spatial(u) * self.spec.direction_bins + d.min(self.spec.direction_bins - 1)
    }
}

/// Draws `v` from `H_δ(u, ·) dν_L` normalized: the crossing sits at a uniform
/// point of u's segment, v meets it at angle θ with density ∝ |sin θ|, and
/// v's start is a uniform distance back from the crossing.
pub fn sample_kernel_neighbor<R: Rng + ?Sized>(u: &UnitTangent, delta: f64, rng: &mut R) -> UnitTangent {
    let x = u.flow(rng.random::<f64>() * delta);
    // |sin θ| on [0, π) by inversion, then a random side.
    let mut theta = (1.0 - 2.0 * rng.random::<f64>()).acos();
    if rng.random::<bool>() {
        theta += PI;
    }
    UnitTangent::new(x.base, x.direction + theta).flow(-rng.random::<f64>() * delta)
}

const BLOCK: usize = 4096;

/// Builds the row-stochastic transition matrix on grid states and reports its top spectrum.
pub fn discretized_markov_operator(delta: f64, grid: GridSpec, s: &Surface, seed: u64) -> Result<SpectralReport> {
    let total_cells = grid.rings * grid.sectors * grid.direction_bins;
    if total_cells > 200_000 || grid.rings == 0 || grid.sectors == 0 || grid.direction_bins == 0 {
        return Err(Error::Config(format!("grid of {total_cells} raw cells")));
    }
    let g = Grid { spec: grid, cosh_r: s.circumradius.cosh(), s };
    // Cells reached by polygon points, estimated from the same draws.
    let n_total = total_cells * grid.samples_per_state;
    let blocks = n_total.div_ceil(BLOCK);
    let counts: Vec<HashMap<(u32, u32), u32>> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<HashMap<(u32, u32), u32>> {
            let mut rng = stream(seed, 0x0b, b as u64);
            let mut m = HashMap::new();
            let n = BLOCK.min(n_total - b * BLOCK);
            for _ in 0..n {
                let u = sample_liouville(&mut rng, g.s);
                let v = sample_kernel_neighbor(&u, delta, &mut rng);
                let (v, _) = g.s.reduce_tangent(&v)?;
                *m.entry((g.state(&u) as u32, g.state(&v) as u32)).or_insert(0) += 1;
            }
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut merged: HashMap<(u32, u32), f64> = HashMap::new();
    for m in counts {
        for ((i, j), c) in m {
            *merged.entry((i, j)).or_insert(0.0) += c as f64;
            *merged.entry((j, i)).or_insert(0.0) += c as f64;
        }
    }
    // Compact state indices.
    let mut used: Vec<u32> = merged.keys().map(|&(i, _)| i).collect();
    used.sort_unstable();
    used.dedup();
    let index: HashMap<u32, usize> = used.iter().enumerate().map(|(k, &i)| (i, k)).collect();
    let n = used.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut keys: Vec<_> = merged.into_iter().collect();
    keys.sort_by_key(|&((i, j), _)| (i, j));
    for ((i, j), c) in keys {
        rows[index[&i]].push((index[&j], c));
    }
    let degree: Vec<f64> = rows.iter().map(|r| r.iter().map(|&(_, c)| c).sum()).collect();
    // Row-normalized operator M and its checks.
    let mut row_sum_error: f64 = 0.0;
    let mut constant_residual: f64 = 0.0;
    for (r, &d) in rows.iter().zip(&degree) {
        let sum: f64 = r.iter().map(|&(_, c)| c / d).sum();
        row_sum_error = row_sum_error.max((sum - 1.0).abs());
        constant_residual = constant_residual.max((sum - 1.0).abs());
    }
    // Symmetric similarity transform D^{-1/2} C D^{-1/2} shares M's spectrum.
    let sq: Vec<f64> = degree.iter().map(|d| d.sqrt()).collect();
    let sym: Vec<Vec<(usize, f64)>> =
        rows.iter().enumerate().map(|(i, r)| r.iter().map(|&(j, c)| (j, c / (sq[i] * sq[j]))).collect()).collect();
    let norm = sq.iter().map(|x| x * x).sum::<f64>().sqrt();
    let top: Vec<f64> = sq.iter().map(|x| x / norm).collect();
    let lambda1 = rayleigh(&sym, &top);
    let (lambda2_abs, iterations) = second_eigenvalue(&sym, &top, seed)?;
    let spatial: std::collections::HashSet<u32> = used.iter().map(|&i| i / grid.direction_bins as u32).collect();
    Ok(SpectralReport {
        spatial_cells: spatial.len(),
        states: n,
        lambda1,
        lambda2_abs,
        gap_ratio: lambda2_abs / lambda1,
        row_sum_error,
        constant_residual,
        iterations,
        transitions: n_total,
    })
}

fn matvec(a: &[Vec<(usize, f64)>], x: &[f64], y: &mut [f64]) {
    for (yi, r) in y.iter_mut().zip(a) {
        *yi = r.iter().map(|&(j, c)| c * x[j]).sum();
    }
}

fn rayleigh(a: &[Vec<(usize, f64)>], x: &[f64]) -> f64 {
    let mut y = vec![0.0; x.len()];
    matvec(a, x, &mut y);
    x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>() / x.iter().map(|p| p * p).sum::<f64>()
}

fn orthonormalize(block: &mut [Vec<f64>], against: &[f64]) {
    for k in 0..block.len() {
        let (done, rest) = block.split_at_mut(k);
        let v = &mut rest[0];
        for _ in 0..2 {
            let p: f64 = v.iter().zip(against).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(against).for_each(|(a, b)| *a -= p * b);
            for w in done.iter() {
                let p: f64 = v.iter().zip(w).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(w).for_each(|(a, b)| *a -= p * b);
            }
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= n);
    }
}

/// Largest |eigenvalue| on the complement of `top`, by block power iteration
/// with deflation and Rayleigh–Ritz extraction.
fn second_eigenvalue(a: &[Vec<(usize, f64)>], top: &[f64], seed: u64) -> Result<(f64, usize)> {
    const BLOCK_SIZE: usize = 8;
    const MAX_ITERS: usize = 20_000;
    let n = top.len();
    if n < BLOCK_SIZE + 2 {
        return Err(Error::Convergence(format!("only {n} states")));
    }
    let mut rng = stream(seed, 0x0c, 0);
    let mut x: Vec<Vec<f64>> = (0..BLOCK_SIZE).map(|_| (0..n).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
    orthonormalize(&mut x, top);
    let mut prev = f64::NAN;
    let mut y = vec![vec![0.0; n]; BLOCK_SIZE];
    for it in 1..=MAX_ITERS {
        for (xi, yi) in x.iter().zip(y.iter_mut()) {
            matvec(a, xi, yi);
        }
        if it % 10 == 0 {
            // Ritz values of the block.
            let h: DMatrix<f64> =
                DMatrix::from_fn(BLOCK_SIZE, BLOCK_SIZE, |i, j| x[i].iter().zip(&y[j]).map(|(p, q)| p * q).sum());
            let eig = SymmetricEigen::new(h);
            let lam = eig.eigenvalues.iter().fold(0.0f64, |m, v: &f64| m.max(v.abs()));
            if (lam - prev).abs() < 1e-11 {
                return Ok((lam, it));
            }
            prev = lam;
        }
        std::mem::swap(&mut x, &mut y);
        orthonormalize(&mut x, top);
    }
    Err(Error::Convergence(format!("block power iteration after {MAX_ITERS} steps")))
}

#[cfg(test)]
mod tests {
    use super::super::tests::surface;
    use super::*;
    use crate::tracer::KernelContext;

    #[test]
    fn sampled_neighbors_cross() {
        let s = surface();
        let ctx = KernelContext::new(s, 0.1).unwrap();
        let mut r = stream(41, 0, 0);
        for _ in 0..2000 {
            let u = sample_liouville(&mut r, s);
            let v = sample_kernel_neighbor(&u, 0.1, &mut r);
            let (v, _) = s.reduce_tangent(&v).unwrap();
            let (h, deg) = ctx.eval(&u, &v);
            assert!(h == 1 || deg);
        }
    }

    #[test]
    fn operator_is_stochastic_with_gap() {
        let s = surface();
        let spec = GridSpec { rings: 4, sectors: 16, direction_bins: 4, samples_per_state: 50 };
        let rep = discretized_markov_operator(0.3, spec, s, 5).unwrap();
        assert!(rep.row_sum_error < 1e-12);
        assert!(rep.constant_residual < 1e-12);
        assert!((rep.lambda1 - 1.0).abs() < 1e-9);
        assert!(rep.lambda2_abs < 1.0);
    }

    #[test]
    fn second_eigenvalue_of_known_matrix() {
        // Path graph random walk with self loops: spectrum (1 + cos(kπ/n)) / 2.
        let n = 40;
        let deg = |i: usize| if i == 0 || i == n - 1 { 2.0 } else { 3.0 };
        let mut a = vec![Vec::new(); n];
        for i in 0..n {
            let mut push = |j: usize, w: f64| a[i].push((j, w / (deg(i) * deg(j) as f64).sqrt()));
            push(i, 1.0);
            if i > 0 {
                push(i - 1, 1.0);
            }
            if i + 1 < n {
                push(i + 1, 1.0);
            }
        }
        let norm: f64 = (0..n).map(deg).sum::<f64>().sqrt();
        let top: Vec<f64> = (0..n).map(|i| deg(i).sqrt() / norm).collect();
        let (l2, _) = second_eigenvalue(&a, &top, 1).unwrap();
        let exact = DMatrix::from_fn(n, n, |i, j| a[i].iter().find(|e| e.0 == j).map_or(0.0, |e| e.1));
        let mut ev: Vec<f64> = SymmetricEigen::new(exact).eigenvalues.iter().map(|v| v.abs()).collect();
        ev.sort_by(|x, y| y.partial_cmp(x).unwrap());
        assert!((l2 - ev[1]).abs() < 1e-8, "{l2} vs {}", ev[1]);
    }
}
