//! Shifts of finite type, finite-memory potentials and their Gibbs states as
//! block Markov chains.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Largest number of block states a chain may have.
pub const STATE_CAP: usize = 4096;
/// Below this many states the second eigenvalue comes from a dense solver.
const DENSE_EIG_LIMIT: usize = 512;
const POWER_TOL: f64 = 1e-13;
const POWER_MAX_ITERS: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpace {
    pub q: usize,
    /// `a[i][j]` is true when `j` may follow `i`.
    pub a: Vec<Vec<bool>>,
    /// Least `m` with `Aᵐ` strictly positive.
    pub m_mix: usize,
}

fn bool_mul(x: &[Vec<bool>], y: &[Vec<bool>]) -> Vec<Vec<bool>> {
    let q = x.len();
    (0..q).map(|i| (0..q).map(|j| (0..q).any(|k| x[i][k] && y[k][j])).collect()).collect()
}

/// Validates a 0/1 transition matrix and finds its mixing exponent.
pub fn build_shift(q: usize, a: &[Vec<u8>]) -> Result<ShiftSpace> {
    if q == 0 || q > 255 || a.len() != q || a.iter().any(|r| r.len() != q) {
        return Err(Error::Config(format!("transition matrix must be {q}×{q}")));
    }
    if a.iter().flatten().any(|&v| v > 1) {
        return Err(Error::Config("transition matrix entries must be 0 or 1".into()));
    }
    let a: Vec<Vec<bool>> = a.iter().map(|r| r.iter().map(|&v| v == 1).collect()).collect();
    for i in 0..q {
        if !a[i].iter().any(|&v| v) || !(0..q).any(|k| a[k][i]) {
            return Err(Error::Config(format!("symbol {i} has an empty row or column")));
        }
    }
    let cap = 2 * q * q;
    let mut power = a.clone();
    for m in 1..=cap {
        if power.iter().flatten().all(|&v| v) {
            return Ok(ShiftSpace { q, a, m_mix: m });
        }
        power = bool_mul(&power, &a);
    }
    // Certificate: a zero of A^(2q²), by repeated squaring.
    let mut result: Option<Vec<Vec<bool>>> = None;
    let mut base = a.clone();
    let mut e = cap;
    while e > 0 {
        if e & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => bool_mul(&r, &base),
            });
        }
        base = bool_mul(&base, &base);
        e >>= 1;
    }
    let r = result.unwrap();
    let (row, col) = (0..q).flat_map(|i| (0..q).map(move |j| (i, j))).find(|&(i, j)| !r[i][j]).unwrap();
    Err(Error::NotMixing { power: cap, row, col })
}

impl ShiftSpace {
    pub fn full(q: usize) -> Self {
        build_shift(q, &vec![vec![1; q]; q]).expect("full shift is mixing")
    }

    pub fn golden_mean() -> Self {
        build_shift(2, &[vec![1, 1], vec![1, 0]]).expect("golden mean shift is mixing")
    }

    pub fn admissible(&self, w: &[u8]) -> bool {
        w.iter().all(|&s| (s as usize) < self.q) && w.windows(2).all(|p| self.a[p[0] as usize][p[1] as usize])
    }

    /// Admissible words of length `n`, in lexicographic order.
    pub fn words(&self, n: usize) -> Vec<Vec<u8>> {
        let mut layer: Vec<Vec<u8>> = vec![vec![]];
        for _ in 0..n {
            let mut next = Vec::new();
            for w in &layer {
                for s in 0..self.q as u8 {
                    if w.last().is_none_or(|&l| self.a[l as usize][s as usize]) {
                        let mut v = w.clone();
                        v.push(s);
                        next.push(v);
                    }
                }
            }
            layer = next;
        }
        layer
    }

    /// Words of length `n` whose periodic extension is admissible; each is one
    /// point of period dividing `n`.
    pub fn cyclic_words(&self, n: usize) -> Vec<Vec<u8>> {
        if n == 0 {
            return vec![];
        }
        self.words(n).into_iter().filter(|w| self.a[w[n - 1] as usize][w[0] as usize]).collect()
    }
}

/// Code of a word in base `q`, first symbol most significant.
pub fn word_code(w: &[u8], q: usize) -> usize {
    w.iter().fold(0usize, |acc, &s| acc * q + s as usize)
}

/// Real function of the first `memory + 1` symbols.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub q: usize,
    pub memory: usize,
    /// Value per word code of length `memory + 1`.
    pub table: Vec<f64>,
}

impl Potential {
    pub fn from_table(q: usize, memory: usize, table: Vec<f64>) -> Result<Self> {
        let n = q.checked_pow(memory as u32 + 1).filter(|&n| n <= STATE_CAP * q);
        if n != Some(table.len()) {
            return Err(Error::Config(format!("potential table needs {q}^{} entries", memory + 1)));
        }
        if table.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("potential values must be finite".into()));
        }
        Ok(Self { q, memory, table })
    }

    pub fn from_fn(q: usize, memory: usize, f: impl Fn(&[u8]) -> f64) -> Self {
        let n = q.pow(memory as u32 + 1);
        let table = (0..n)
            .map(|c| {
                let mut w = vec![0u8; memory + 1];
                let mut c = c;
                for k in (0..=memory).rev() {
                    w[k] = (c % q) as u8;
                    c /= q;
                }
                f(&w)
            })
            .collect();
        Self { q, memory, table }
    }

    pub fn constant(q: usize, c: f64) -> Self {
        Self { q, memory: 0, table: vec![c; q] }
    }

    /// `[x₀ = s]`.
    pub fn indicator(q: usize, s: u8) -> Self {
        Self::from_fn(q, 0, |w| (w[0] == s) as u8 as f64)
    }

    /// Uniform values in `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(q: usize, memory: usize, scale: f64, rng: &mut R) -> Self {
        let n = q.pow(memory as u32 + 1);
        Self { q, memory, table: (0..n).map(|_| rng.random_range(-scale..=scale)).collect() }
    }

    /// Value on a window; reads the first `memory + 1` symbols.
    #[inline]
    pub fn value(&self, w: &[u8]) -> f64 {
        self.table[word_code(&w[..=self.memory], self.q)]
    }

    /// The same function with a longer declared memory.
    pub fn lift(&self, memory: usize) -> Self {
        if memory <= self.memory {
            return self.clone();
        }
        Self::from_fn(self.q, memory, |w| self.value(w))
    }

    pub fn add(&self, other: &Potential) -> Self {
        let m = self.memory.max(other.memory);
        Self::from_fn(self.q, m, |w| self.value(w) + other.value(w))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self { table: self.table.iter().map(|v| c * v).collect(), ..self.clone() }
    }

    /// `u − u∘σ`.
    pub fn coboundary(u: &Potential) -> Self {
        Self::from_fn(u.q, u.memory + 1, |w| u.value(w) - u.value(&w[1..]))
    }

    /// Sum over one period of the periodic point `w^∞`.
    pub fn periodic_sum(&self, w: &[u8]) -> f64 {
        let n = w.len();
        let mut buf = vec![0u8; self.memory + 1];
        (0..n)
            .map(|j| {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = w[(j + k) % n];
                }
                self.value(&buf)
            })
            .sum()
    }

    /// Min and max over windows admissible in `shift`.
    pub fn range_on(&self, shift: &ShiftSpace) -> (f64, f64) {
        shift.words(self.memory + 1).iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), w| {
            let v = self.value(w);
            (lo.min(v), hi.max(v))
        })
    }
}

/// Symbols `x_j` for `j` in `[start, start + data.len())`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BiSequence {
    pub start: i64,
    pub data: Vec<u8>,
}

impl BiSequence {
    pub fn end(&self) -> i64 {
        self.start + self.data.len() as i64
    }

    #[inline]
    pub fn get(&self, i: i64) -> u8 {
        self.data[(i - self.start) as usize]
    }

    /// Symbols `x_i … x_{i+len-1}`.
    pub fn window(&self, i: i64, len: usize) -> Result<&[u8]> {
        if i < self.start || i + len as i64 > self.end() {
            let needed = (self.start - i).max(0) as usize + (i + len as i64 - self.end()).max(0) as usize;
            return Err(Error::WindowTooShort { needed: self.data.len() + needed, have: self.data.len() });
        }
        let k = (i - self.start) as usize;
        Ok(&self.data[k..k + len])
    }

    /// `σⁿx` as a new window.
    pub fn shifted(&self, n: i64) -> BiSequence {
        BiSequence { start: self.start - n, data: self.data.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Bilateral,
}

/// Gibbs state of a potential, as a stationary Markov chain on admissible blocks.
#[derive(Debug, Clone, Serialize)]
pub struct GibbsChain {
    pub shift: ShiftSpace,
    pub potential: Potential,
    pub block: usize,
    pub states: Vec<Vec<u8>>,
    #[serde(skip)]
    index: Vec<u32>,
    pub pressure: f64,
    pub lambda: f64,
    /// `|λ₂| / λ₁` of the weighted transfer matrix.
    pub gap_ratio: f64,
    pub right: Vec<f64>,
    pub left: Vec<f64>,
    pub stationary: Vec<f64>,
    /// Successor states with transition probabilities.
    pub succ: Vec<Vec<(usize, f64)>>,
    #[serde(skip)]
    pred: Vec<Vec<(usize, f64)>>,
    #[serde(skip)]
    cumulative: Vec<f64>,
}

/// Leading eigenvector of a nonnegative sparse operator by power iteration.
fn power_iterate(n: usize, apply: impl Fn(&[f64], &mut [f64])) -> Result<(f64, Vec<f64>)> {
    let mut v = vec![1.0 / n as f64; n];
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        apply(&v, &mut w);
        let norm: f64 = w.iter().sum();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Convergence("transfer operator annihilated the iterate".into()));
        }
        let resid = v.iter().zip(&w).map(|(a, b)| (b - norm * a).abs()).fold(0.0, f64::max);
        let vmax = v.iter().cloned().fold(0.0, f64::max);
        lambda = norm;
        for (a, b) in v.iter_mut().zip(&w) {
            *a = b / norm;
        }
        if resid <= POWER_TOL * norm * vmax {
            return Ok((lambda, v));
        }
    }
    Err(Error::Convergence(format!("power iteration stalled at λ ≈ {lambda}")))
}

/// Gibbs chain with the smallest block length that carries the potential.
pub fn gibbs_from_potential(shift: &ShiftSpace, phi: &Potential) -> Result<GibbsChain> {
    GibbsChain::new(shift, phi, phi.memory.max(1))
}

/// Topological pressure of `phi`.
pub fn pressure(shift: &ShiftSpace, phi: &Potential) -> Result<f64> {
    Ok(gibbs_from_potential(shift, phi)?.pressure)
}

impl GibbsChain {
    /// Builds the chain on admissible words of length `block ≥ max(memory, 1)`.
    pub fn new(shift: &ShiftSpace, phi: &Potential, block: usize) -> Result<Self> {
        if phi.q != shift.q {
            return Err(Error::Config("potential alphabet differs from shift".into()));
        }
        let block = block.max(phi.memory).max(1);
        let q = shift.q;
        let size = q.checked_pow(block as u32).filter(|&s| s <= STATE_CAP).ok_or(Error::MemoryCap(block))?;
        let states = shift.words(block);
        let mut index = vec![u32::MAX; size];
        for (k, w) in states.iter().enumerate() {
            index[word_code(w, q)] = k as u32;
        }
        let n = states.len();
        // Weighted edges w → w[1..]·c with weight exp φ(w·c).
        let mut edges: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let mut ext = vec![0u8; block + 1];
        for (k, w) in states.iter().enumerate() {
            ext[..block].copy_from_slice(w);
            for c in 0..q as u8 {
                if !shift.a[w[block - 1] as usize][c as usize] {
                    continue;
                }
                ext[block] = c;
                let next = index[word_code(&ext[1..], q)] as usize;
                edges[k].push((next, phi.value(&ext).exp()));
            }
        }
        let (lambda, right) = power_iterate(n, |v, out| {
            for (k, e) in edges.iter().enumerate() {
                out[k] = e.iter().map(|&(j, wt)| wt * v[j]).sum();
            }
        })?;
        let (lambda_l, left) = power_iterate(n, |v, out| {
            out.iter_mut().for_each(|o| *o = 0.0);
            for (k, e) in edges.iter().enumerate() {
                for &(j, wt) in e {
                    out[j] += wt * v[k];
                }
            }
        })?;
        if (lambda - lambda_l).abs() > 1e-10 * lambda {
            return Err(Error::Convergence(format!("left and right eigenvalues differ: {lambda} vs {lambda_l}")));
        }
        let gap_ratio = second_eigenvalue(&edges, lambda, &right, &left)? / lambda;
        if gap_ratio > 1.0 - 1e-9 {
            return Err(Error::DegenerateGap(gap_ratio));
        }
        let succ: Vec<Vec<(usize, f64)>> = edges
            .iter()
            .enumerate()
            .map(|(k, e)| {
                let row: Vec<(usize, f64)> =
                    e.iter().map(|&(j, wt)| (j, wt * right[j] / (lambda * right[k]))).collect();
                let s: f64 = row.iter().map(|r| r.1).sum();
                row.into_iter().map(|(j, p)| (j, p / s)).collect()
            })
            .collect();
        let mut p: Vec<f64> = left.iter().zip(&right).map(|(a, b)| a * b).collect();
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        // Polish against the normalized transitions.
        for _ in 0..50 {
            let mut next = vec![0.0; n];
            for (k, row) in succ.iter().enumerate() {
                for &(j, pr) in row {
                    next[j] += p[k] * pr;
                }
            }
            let s: f64 = next.iter().sum();
            let diff = next.iter().zip(&p).map(|(a, b)| (a / s - b).abs()).fold(0.0, f64::max);
            p = next.into_iter().map(|x| x / s).collect();
            if diff < 1e-16 {
                break;
            }
        }
        let mut pred: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (k, row) in succ.iter().enumerate() {
            for &(j, pr) in row {
                pred[j].push((k, p[k] * pr / p[j]));
            }
        }
        let mut acc = 0.0;
        let cumulative = p
            .iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect();
        Ok(Self {
            shift: shift.clone(),
            potential: phi.clone(),
            block,
            states,
            index,
            pressure: lambda.ln(),
            lambda,
            gap_ratio,
            right,
            left,
            stationary: p,
            succ,
            pred,
            cumulative,
        })
    }

    /// The same Gibbs state on longer blocks.
    pub fn with_block(&self, block: usize) -> Result<Self> {
        if block <= self.block {
            return Ok(self.clone());
        }
        Self::new(&self.shift, &self.potential, block)
    }

    pub fn q(&self) -> usize {
        self.shift.q
    }

    pub fn state_of(&self, w: &[u8]) -> Option<usize> {
        if w.len() != self.block || w.iter().any(|&s| s as usize >= self.q()) {
            return None;
        }
        let k = self.index[word_code(w, self.q())];
        (k != u32::MAX).then_some(k as usize)
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.succ[from].iter().find(|r| r.0 == to).map_or(0.0, |r| r.1)
    }

    pub fn transition_matrix(&self) -> DMatrix<f64> {
        let n = self.states.len();
        let mut m = DMatrix::zeros(n, n);
        for (k, row) in self.succ.iter().enumerate() {
            for &(j, p) in row {
                m[(k, j)] = p;
            }
        }
        m
    }

    /// `μ[w]` for the cylinder `x₀…x_{n-1} = w`.
    pub fn cylinder_measure(&self, w: &[u8]) -> Result<f64> {
        if w.is_empty() || !self.shift.admissible(w) {
            return Err(Error::InadmissibleWord(w.iter().map(|&s| s as usize).collect()));
        }
        let l = self.block;
        if w.len() < l {
            return Ok(self
                .states
                .iter()
                .zip(&self.stationary)
                .filter(|(s, _)| s.starts_with(w))
                .map(|(_, p)| p)
                .sum());
        }
        let mut cur = self.state_of(&w[..l]).expect("admissible block");
        let mut prob = self.stationary[cur];
        for i in 1..=w.len() - l {
            let next = self.state_of(&w[i..i + l]).expect("admissible block");
            prob *= self.transition(cur, next);
            cur = next;
        }
        Ok(prob)
    }

    /// `E_μ f`, exactly.
    pub fn expectation(&self, f: &Potential) -> f64 {
        let n = f.memory + 1;
        if n <= self.block {
            return self.states.iter().zip(&self.stationary).map(|(s, p)| p * f.value(s)).sum();
        }
        self.shift.words(n).iter().map(|w| self.cylinder_measure(w).unwrap() * f.value(w)).sum()
    }

    fn draw_stationary<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.cumulative.partition_point(|&c| c <= u).min(self.states.len() - 1)
    }

    fn draw_from<R: Rng + ?Sized>(row: &[(usize, f64)], rng: &mut R) -> usize {
        let mut u: f64 = rng.random();
        for &(j, p) in row {
            if u < p {
                return j;
            }
            u -= p;
        }
        row.last().expect("every state has a successor").0
    }

    /// Appends `k` symbols on the right.
    pub fn extend_forward<R: Rng + ?Sized>(&self, x: &mut BiSequence, k: usize, rng: &mut R) {
        let l = self.block;
        let mut cur = self.state_of(&x.data[x.data.len() - l..]).expect("window holds an admissible block");
        x.data.reserve(k);
        for _ in 0..k {
            cur = Self::draw_from(&self.succ[cur], rng);
            x.data.push(self.states[cur][l - 1]);
        }
    }

    /// Prepends `k` symbols on the left, using the time-reversed chain.
    pub fn extend_backward<R: Rng + ?Sized>(&self, x: &mut BiSequence, k: usize, rng: &mut R) {
        let l = self.block;
        let mut cur = self.state_of(&x.data[..l]).expect("window holds an admissible block");
        let mut left = Vec::with_capacity(k + x.data.len());
        for _ in 0..k {
            cur = Self::draw_from(&self.pred[cur], rng);
            left.push(self.states[cur][0]);
        }
        left.reverse();
        left.extend_from_slice(&x.data);
        x.data = left;
        x.start -= k as i64;
    }

    /// Stationary sample of `x₀ … x_{n-1}`, and also `x_{-n} … x_{-1}` when bilateral.
    pub fn sample_path<R: Rng + ?Sized>(&self, n: usize, direction: Direction, rng: &mut R) -> BiSequence {
        let s = self.draw_stationary(rng);
        let mut x = BiSequence { start: 0, data: self.states[s].clone() };
        if n > self.block {
            self.extend_forward(&mut x, n - self.block, rng);
        }
        if direction == Direction::Bilateral {
            self.extend_backward(&mut x, n, rng);
        }
        x
    }

    /// Exact `Cov(v, w∘σⁿ)` for `n = 0..=n_max` and the fitted decay rate.
    pub fn mixing_check(&self, v: &Potential, w: &Potential, n_max: usize) -> Result<MixingReport> {
        let chain = self.with_block(v.memory.max(w.memory) + 1)?;
        let (ev, ew) = (chain.expectation(v), chain.expectation(w));
        let vs: Vec<f64> = chain.states.iter().map(|s| v.value(s) - ev).collect();
        let mut u: Vec<f64> = chain.states.iter().map(|s| w.value(s) - ew).collect();
        let mut covariances: Vec<f64> = Vec::with_capacity(n_max + 1);
        for n in 0..=n_max {
            if n > 0 {
                u = chain.succ.iter().map(|row| row.iter().map(|&(j, p)| p * u[j]).sum()).collect();
            }
            covariances.push(chain.stationary.iter().zip(&vs).zip(&u).map(|((p, a), b)| p * a * b).sum());
        }
        let scale = covariances.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let pts: Vec<(f64, f64)> = covariances
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, c)| c.abs() > 1e-11 * scale.max(1e-300) && c.abs() > 1e-15)
            .map(|(n, c)| (n as f64, c.abs().ln()))
            .collect();
        let beta_hat = if pts.len() >= 2 { least_squares_slope(&pts).exp() } else { 0.0 };
        Ok(MixingReport { covariances, beta_hat, gap_ratio: self.gap_ratio })
    }

    /// `μ{x : x_i = x_{i+k} for 0 ≤ i ≤ m}`.
    ///
    /// For `|k| ≤ m` the event says `x₀ … x_{m+|k|}` has period `|k|`, so the
    /// first `|k|` symbols are enumerated. Otherwise the two windows are
    /// disjoint: a chain on block pairs `(X_i, X_{i+k})` runs beside the first
    /// block of the second window, which closes the gap at the end.
    pub fn repeat_probability(&self, k: i64, m: usize) -> Result<f64> {
        if k == 0 {
            return Err(Error::Config("repeat offset must be nonzero".into()));
        }
        // Stationarity makes the event for -k a shift of the event for k.
        let k = k.unsigned_abs() as usize;
        let q = self.q();
        if k <= m {
            if (q as f64).powi(k as i32) > (1u64 << 22) as f64 {
                return Err(Error::MemoryCap(k));
            }
            let mut total = 0.0;
            for seed in self.shift.words(k) {
                let w: Vec<u8> = (0..=m + k).map(|i| seed[i % k]).collect();
                if self.shift.admissible(&w) {
                    total += self.cylinder_measure(&w)?;
                }
            }
            return Ok(total);
        }
        let n = self.states.len();
        if (n as f64).powi(3) > (1u64 << 24) as f64 {
            return Err(Error::MemoryCap(self.block));
        }
        let first = |s: usize| self.states[s][0];
        let idx = |y: usize, a: usize, b: usize| (y * n + a) * n + b;
        // f[y, a, b] = P(X_k = y, X_i = a, X_{k+i} = b, windows agree up to i)
        let mut f = vec![0.0f64; n * n * n];
        for y in 0..n {
            for a in 0..n {
                if first(a) == first(y) {
                    f[idx(y, a, y)] = self.stationary[a];
                }
            }
        }
        for _ in 0..m {
            let mut g = vec![0.0f64; n * n * n];
            for y in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let mass = f[idx(y, a, b)];
                        if mass == 0.0 {
                            continue;
                        }
                        for &(a2, pa) in &self.succ[a] {
                            for &(b2, pb) in &self.succ[b] {
                                if first(a2) == first(b2) {
                                    g[idx(y, a2, b2)] += mass * pa * pb;
                                }
                            }
                        }
                    }
                }
            }
            f = g;
        }
        let gap = self.transition_matrix().pow((k - m) as u32);
        let mut total = 0.0;
        for y in 0..n {
            for a in 0..n {
                let link = gap[(a, y)];
                if link == 0.0 {
                    continue;
                }
                total += link * (0..n).map(|b| f[idx(y, a, b)]).sum::<f64>();
            }
        }
        Ok(total)
    }

    /// `μ[J] / exp(S_J φ − |J| Pr)`, where `S_J φ` sums the windows that fit
    /// inside `J`.
    pub fn gibbs_ratio(&self, w: &[u8]) -> Result<f64> {
        let phi = &self.potential;
        let s: f64 =
            if w.len() > phi.memory { (0..w.len() - phi.memory).map(|i| phi.value(&w[i..])).sum() } else { 0.0 };
        Ok(self.cylinder_measure(w)? / (s - w.len() as f64 * self.pressure).exp())
    }

    /// Empirical Gibbs constants: min and max of [`GibbsChain::gibbs_ratio`]
    /// over admissible words with `1 ≤ |J| ≤ max_len`.
    pub fn gibbs_constants(&self, max_len: usize) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = 0.0f64;
        for len in 1..=max_len {
            for w in self.shift.words(len) {
                let ratio = self.gibbs_ratio(&w).expect("admissible word");
                lo = lo.min(ratio);
                hi = hi.max(ratio);
            }
        }
        (lo, hi)
    }
}

/// Largest eigenvalue modulus after the Perron root.
fn second_eigenvalue(edges: &[Vec<(usize, f64)>], lambda: f64, right: &[f64], left: &[f64]) -> Result<f64> {
    let n = edges.len();
    if n == 1 {
        return Ok(0.0);
    }
    if n <= DENSE_EIG_LIMIT {
        let mut m = DMatrix::<f64>::zeros(n, n);
        for (k, e) in edges.iter().enumerate() {
            for &(j, w) in e {
                m[(k, j)] += w;
            }
        }
        let mut mods: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        mods.sort_by(|a, b| b.total_cmp(a));
        // Drop the eigenvalue closest to λ.
        let i = mods.iter().enumerate().min_by(|a, b| (a.1 - lambda).abs().total_cmp(&(b.1 - lambda).abs())).unwrap().0;
        mods.remove(i);
        return Ok(mods[0]);
    }
    // Power iteration on the complement of the Perron direction.
    let dot: f64 = left.iter().zip(right).map(|(a, b)| a * b).sum();
    let project = |v: &mut Vec<f64>| {
        let c: f64 = left.iter().zip(v.iter()).map(|(a, b)| a * b).sum::<f64>() / dot;
        v.iter_mut().zip(right).for_each(|(x, r)| *x -= c * r);
    };
    let mut v: Vec<f64> = (0..n).map(|k| ((k * 7919 % 104729) as f64 / 104729.0) - 0.5).collect();
    project(&mut v);
    let mut log_growth = Vec::new();
    for _ in 0..400 {
        let mut w = vec![0.0; n];
        for (k, e) in edges.iter().enumerate() {
            w[k] = e.iter().map(|&(j, wt)| wt * v[j]).sum();
        }
        project(&mut w);
        let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
        if nw == 0.0 || nv == 0.0 {
            return Ok(0.0);
        }
        log_growth.push((nw / nv).ln());
        v = w.into_iter().map(|x| x / nw).collect();
    }
    // Average over the tail smooths out complex-pair oscillation.
    let tail = &log_growth[200..];
    Ok((tail.iter().sum::<f64>() / tail.len() as f64).exp())
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Serialize)]
pub struct MixingReport {
    pub covariances: Vec<f64>,
    /// `exp` of the fitted slope of `log|cov|`; 0 when the covariances vanish.
    pub beta_hat: f64,
    pub gap_ratio: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn golden() -> f64 {
        (1.0 + 5f64.sqrt()) / 2.0
    }

    #[test]
    fn mixing_exponents() {
        assert_eq!(ShiftSpace::full(2).m_mix, 1);
        assert_eq!(ShiftSpace::golden_mean().m_mix, 2);
        assert!(matches!(build_shift(2, &[vec![0, 1], vec![1, 0]]), Err(Error::NotMixing { power: 8, .. })));
        assert!(matches!(build_shift(2, &[vec![1, 0], vec![1, 0]]), Err(Error::Config(_))));
    }

    #[test]
    fn pressures() {
        let full = ShiftSpace::full(2);
        let c = gibbs_from_potential(&full, &Potential::constant(2, 0.0)).unwrap();
        assert!((c.pressure - 2f64.ln()).abs() < 1e-12);
        assert!(c.stationary.iter().all(|p| (p - 0.5).abs() < 1e-12));
        let f = Potential::from_fn(2, 0, |w| if w[0] == 1 { 2f64.ln() } else { 0.0 });
        let c = gibbs_from_potential(&full, &f).unwrap();
        assert!((c.pressure - 3f64.ln()).abs() < 1e-12);
        assert!((c.cylinder_measure(&[1]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let m = c.cylinder_measure(&[1, 1, 0]).unwrap();
        assert!((m - 4.0 / 27.0).abs() < 1e-12);
        let g = gibbs_from_potential(&ShiftSpace::golden_mean(), &Potential::constant(2, 0.0)).unwrap();
        assert!((g.pressure - golden().ln()).abs() < 1e-10);
    }

    #[test]
    fn chain_is_stochastic_and_stationary() {
        let mut r = stream(41, 0, 0);
        let phi = Potential::random(3, 2, 1.0, &mut r);
        let shift = build_shift(3, &[vec![1, 1, 0], vec![0, 1, 1], vec![1, 1, 1]]).unwrap();
        let c = gibbs_from_potential(&shift, &phi).unwrap();
        for row in &c.succ {
            assert!((row.iter().map(|r| r.1).sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let mut next = vec![0.0; c.states.len()];
        for (k, row) in c.succ.iter().enumerate() {
            for &(j, p) in row {
                next[j] += c.stationary[k] * p;
            }
        }
        assert!(next.iter().zip(&c.stationary).all(|(a, b)| (a - b).abs() < 1e-10));
        for n in 1..=8 {
            let total: f64 = shift.words(n).iter().map(|w| c.cylinder_measure(w).unwrap()).sum();
            assert!((total - 1.0).abs() < 1e-12, "n = {n}: {total}");
        }
        assert!(matches!(c.cylinder_measure(&[0, 2]), Err(Error::InadmissibleWord(_))));
    }

    #[test]
    fn eigen_residuals() {
        let mut r = stream(42, 0, 0);
        let shift = ShiftSpace::golden_mean();
        let phi = Potential::random(2, 3, 0.7, &mut r);
        let c = gibbs_from_potential(&shift, &phi).unwrap();
        // Rebuild the weighted matrix independently from the words.
        let n = c.states.len();
        let mut w = DMatrix::<f64>::zeros(n, n);
        for (i, s) in c.states.iter().enumerate() {
            for (j, t) in c.states.iter().enumerate() {
                if s[1..] == t[..c.block - 1] && shift.admissible(&[s[c.block - 1], t[c.block - 1]]) {
                    let mut ext = s.clone();
                    ext.push(t[c.block - 1]);
                    w[(i, j)] = phi.value(&ext).exp();
                }
            }
        }
        let h = nalgebra::DVector::from_vec(c.right.clone());
        let nu = nalgebra::DVector::from_vec(c.left.clone());
        let rh = (&w * &h - c.lambda * &h).amax() / h.amax();
        let rn = (w.transpose() * &nu - c.lambda * &nu).amax() / nu.amax();
        assert!(rh <= 1e-12 * c.lambda && rn <= 1e-12 * c.lambda, "{rh} {rn}");
    }

    #[test]
    fn coboundaries_do_not_change_the_state() {
        let mut r = stream(43, 0, 0);
        let shift = ShiftSpace::full(2);
        let phi = Potential::random(2, 1, 1.0, &mut r);
        let u = Potential::random(2, 1, 1.0, &mut r);
        let psi = phi.add(&Potential::coboundary(&u));
        let a = gibbs_from_potential(&shift, &phi).unwrap();
        let b = gibbs_from_potential(&shift, &psi).unwrap();
        assert!((a.pressure - b.pressure).abs() < 1e-10);
        for n in psi.memory..=6 {
            for w in shift.words(n.max(1)) {
                assert!((a.cylinder_measure(&w).unwrap() - b.cylinder_measure(&w).unwrap()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pressure_is_convex() {
        let mut r = stream(44, 0, 0);
        let shift = ShiftSpace::golden_mean();
        for _ in 0..20 {
            let p1 = Potential::random(2, 2, 1.0, &mut r);
            let p2 = Potential::random(2, 2, 1.0, &mut r);
            let mid = p1.add(&p2).scale(0.5);
            let lhs = pressure(&shift, &p1).unwrap() + pressure(&shift, &p2).unwrap();
            assert!(lhs >= 2.0 * pressure(&shift, &mid).unwrap() - 1e-9);
        }
    }

    #[test]
    fn shift_invariance_of_cylinders() {
        let mut r = stream(45, 0, 0);
        let shift = ShiftSpace::golden_mean();
        let c = gibbs_from_potential(&shift, &Potential::random(2, 2, 1.0, &mut r)).unwrap();
        for w in shift.words(4) {
            for pos in 1..4 {
                // μ{x_pos … = w} as a sum over prefixes.
                let at: f64 = shift
                    .words(pos + w.len())
                    .iter()
                    .filter(|u| u[pos..] == w[..])
                    .map(|u| c.cylinder_measure(u).unwrap())
                    .sum();
                assert!((at - c.cylinder_measure(&w).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_is_reproducible_and_admissible() {
        let shift = ShiftSpace::golden_mean();
        let c = gibbs_from_potential(&shift, &Potential::constant(2, 0.0)).unwrap();
        let a = c.sample_path(500, Direction::Bilateral, &mut stream(46, 0, 0));
        let b = c.sample_path(500, Direction::Bilateral, &mut stream(46, 0, 0));
        assert_eq!(a, b);
        assert_eq!((a.start, a.end()), (-500, 500));
        assert!(shift.admissible(&a.data));
    }

    #[test]
    fn mixing_reports() {
        let full = ShiftSpace::full(2);
        let f = Potential::from_fn(2, 0, |w| if w[0] == 1 { 0.4 } else { 0.0 });
        let bern = gibbs_from_potential(&full, &f).unwrap();
        let v = Potential::indicator(2, 1);
        let rep = bern.mixing_check(&v, &v, 10).unwrap();
        assert!(rep.covariances[0] > 0.0);
        assert!(rep.covariances[1..].iter().all(|c| c.abs() < 1e-14));
        let rep = bern.mixing_check(&v, &Potential::constant(2, 3.0), 5).unwrap();
        assert!(rep.covariances.iter().all(|c| c.abs() < 1e-14));
        let g = gibbs_from_potential(&ShiftSpace::golden_mean(), &Potential::constant(2, 0.0)).unwrap();
        let rep = g.mixing_check(&v, &v, 20).unwrap();
        assert!(rep.beta_hat <= rep.gap_ratio + 0.05, "{} vs {}", rep.beta_hat, rep.gap_ratio);
        assert!((g.gap_ratio - 1.0 / golden().powi(2)).abs() < 1e-9);
    }

    #[test]
    fn repeat_probabilities() {
        let full = ShiftSpace::full(2);
        let u = gibbs_from_potential(&full, &Potential::constant(2, 0.0)).unwrap();
        for m in 1..=6 {
            let p = u.repeat_probability(m as i64 + 3, m).unwrap();
            assert!((p - 0.5f64.powi(m as i32 + 1)).abs() < 1e-14);
        }
        let g = gibbs_from_potential(&ShiftSpace::golden_mean(), &Potential::constant(2, 0.0)).unwrap();
        let mut prev = 1.0;
        for m in 0..30 {
            let p = g.repeat_probability(1, m).unwrap();
            assert!(p <= prev + 1e-15);
            prev = p;
        }
        assert_eq!(g.repeat_probability(2, 4).unwrap(), g.repeat_probability(-2, 4).unwrap());
    }

    #[test]
    fn repeat_probability_matches_cylinder_sum() {
        let shift = ShiftSpace::golden_mean();
        let mut rng = stream(5, 0, 0);
        let chain = gibbs_from_potential(&shift, &Potential::random(2, 2, 1.0, &mut rng)).unwrap();
        for k in 1..=5usize {
            for m in 0..=4usize {
                let brute: f64 = shift
                    .words(m + k + 1)
                    .iter()
                    .filter(|w| (0..=m).all(|i| w[i] == w[i + k]))
                    .map(|w| chain.cylinder_measure(w).unwrap())
                    .sum();
                let p = chain.repeat_probability(k as i64, m).unwrap();
                assert!((p - brute).abs() < 1e-13, "k={k} m={m}: {p} vs {brute}");
            }
        }
    }
}
