//! Summary statistics, Kolmogorov–Smirnov tests and log-log variance regression.

use crate::error::{Error, Result};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Smallest sample accepted by the KS tests.
pub const KS_MIN_SAMPLES: usize = 30;
/// Probabilities reported by [`summary`].
pub const QUANTILE_LEVELS: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    pub skewness: f64,
    pub quantiles: [f64; 5],
}

impl Summary {
    pub fn stderr(&self) -> f64 {
        (self.variance / self.n as f64).sqrt()
    }
}

/// Linear-interpolation quantile (type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn summary(x: &[f64]) -> Summary {
    let n = x.len();
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let m2 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let m3 = x.iter().map(|v| (v - mean).powi(3)).sum::<f64>();
    let variance = if n > 1 { m2 / (nf - 1.0) } else { 0.0 };
    let skewness = if m2 > 0.0 { (m3 / nf) / (m2 / nf).powf(1.5) } else { 0.0 };
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantiles = QUANTILE_LEVELS.map(|p| quantile_sorted(&sorted, p));
    Summary { n, mean, variance, skewness, quantiles }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Kolmogorov survival function `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 0.3 {
        // Series below converges slowly here and the value is 1 to double precision.
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value with the Stephens small-sample correction.
fn ks_p(d: f64, ne: f64) -> f64 {
    let s = ne.sqrt();
    kolmogorov_sf((s + 0.12 + 0.11 / s) * d)
}

/// One-sample test against a continuous CDF.
pub fn ks_one_sample(x: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if x.len() < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples(x.len()));
    }
    let mut s = x.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in s.iter().enumerate() {
        let f = cdf(v);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult { statistic: d, p_value: ks_p(d, n) })
}

/// Two-sample test.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    let m = x.len().min(y.len());
    if m < KS_MIN_SAMPLES {
        return Err(Error::TooFewSamples(m));
    }
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 - j as f64 / n2).abs());
    }
    Ok(KsResult { statistic: d, p_value: ks_p(d, n1 * n2 / (n1 + n2)) })
}

/// KS test against the Gaussian with the sample's own mean and variance.
pub fn ks_fitted_gaussian(x: &[f64]) -> Result<KsResult> {
    let s = summary(x);
    let sd = s.variance.sqrt();
    if !(sd > 0.0) {
        return Err(Error::DegenerateInput("zero variance".into()));
    }
    let normal = statrs::distribution::Normal::new(s.mean, sd).map_err(|e| Error::DegenerateInput(e.to_string()))?;
    ks_one_sample(x, |v| normal.cdf(v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    /// 95% confidence interval for the slope.
    pub ci: (f64, f64),
}

/// Least-squares fit of `log v` against `log T`.
pub fn scaling_regression(ts: &[f64], variances: &[f64]) -> Result<Regression> {
    if ts.len() < 3 || ts.len() != variances.len() {
        return Err(Error::DegenerateInput(format!("{} T values", ts.len())));
    }
    if ts.iter().chain(variances).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::DegenerateInput("non-positive value".into()));
    }
    let x: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = variances.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateInput("all T equal".into()));
    }
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(&y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_stderr = (rss / (n - 2.0) / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 2.0).map_err(|e| Error::DegenerateInput(e.to_string()))?.inverse_cdf(0.975);
    Ok(Regression { slope, intercept, slope_stderr, ci: (slope - t * slope_stderr, slope + t * slope_stderr) })
}
