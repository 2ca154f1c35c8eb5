//! Mixing and convergence summaries over recorded chains.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::dists::{sample_inverse_wishart, WishartParams};
use crate::error::{Error, Result};
use crate::sampler::{PosteriorDraws, PriorConfig};
use crate::ChainRng;

/// Mean tree depth of each latent dimension, one row per sweep.
pub fn avg_tree_depth_trace(draws: &PosteriorDraws) -> Vec<Vec<f64>> {
    draws.trace.iter().map(|r| r.mean_depth.clone()).collect()
}

/// `‖μ‖₁ / N` per sweep.
pub fn mu_l1_trace(draws: &PosteriorDraws) -> Vec<f64> {
    draws.trace.iter().map(|r| r.mu_l1).collect()
}

/// Entry `(i, j)` of the normalized covariance per sweep (burn-in included).
pub fn sigma_trace(draws: &PosteriorDraws, i: usize, j: usize) -> Vec<f64> {
    draws.trace.iter().map(|r| r.sigma[(i, j)]).collect()
}

/// Lag-1 sample autocorrelation of `series[discard..]`, with the biased
/// (denominator n) autocovariance. `None` when the series has zero variance.
pub fn lag1_autocorr(series: &[f64], discard: usize) -> Result<Option<f64>> {
    let s = series.get(discard..).unwrap_or(&[]);
    if s.len() < 10 {
        return Err(Error::param(format!(
            "need at least 10 values after discarding {discard}, have {}",
            s.len()
        )));
    }
    let n = s.len() as f64;
    let mean = s.iter().sum::<f64>() / n;
    let c0: f64 = s.iter().map(|x| (x - mean).powi(2)).sum();
    if !(c0 > 0.0) || !c0.is_finite() {
        return Ok(None);
    }
    let c1: f64 = s.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum();
    Ok(Some((c1 / c0).clamp(-1.0, 1.0)))
}

/// Bin edges (len = counts + 1) and counts; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn with_edges(values: &[f64], edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::param("histogram edges must be strictly increasing"));
        }
        let mut counts = vec![0; edges.len() - 1];
        let last = edges.len() - 1;
        for &v in values {
            if v < edges[0] || v > edges[last] {
                continue;
            }
            let k = edges.partition_point(|&e| e <= v).saturating_sub(1).min(last - 1);
            counts[k] += 1;
        }
        Ok(Self { edges, counts })
    }

    /// Freedman-Diaconis bin width `2·IQR·n^(-1/3)` over the data range.
    pub fn freedman_diaconis(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("cannot bin an empty series"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let iqr = percentile_sorted(&sorted, 75.0) - percentile_sorted(&sorted, 25.0);
        let width = 2.0 * iqr / (sorted.len() as f64).cbrt();
        let bins = if width > 0.0 && hi > lo { ((hi - lo) / width).ceil().clamp(1.0, 10_000.0) as usize } else { 1 };
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
        let edges = (0..=bins).map(|k| lo + (hi - lo) * k as f64 / bins as f64).collect();
        Self::with_edges(&sorted, edges)
    }
}

/// Linear-interpolation percentile of sorted data, `q` in [0, 100].
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Posterior mean and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::param("cannot summarize an empty series"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            lower: percentile_sorted(&sorted, 2.5),
            upper: percentile_sorted(&sorted, 97.5),
        })
    }

    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }
}

/// Post-burn-in summary of a chain.
#[derive(Debug, Clone, Serialize)]
pub struct ChainSummary {
    pub algorithm: String,
    pub sweeps: usize,
    pub burn_in: usize,
    /// Upper triangle of the normalized covariance, row-major.
    pub sigma: Vec<SigmaEntry>,
    pub mean_tree_depth: Vec<f64>,
    /// Lag-1 autocorrelations (biased estimator) of `‖μ‖₁/N` and each
    /// covariance entry; `None` when undefined.
    pub lag1_mu_l1: Option<f64>,
    pub autocorrelation_estimator: &'static str,
}

#[derive(Debug, Clone, Serialize)]
pub struct SigmaEntry {
    pub row: usize,
    pub col: usize,
    #[serde(flatten)]
    pub interval: Interval,
    pub lag1: Option<f64>,
}

pub fn summarize(draws: &PosteriorDraws) -> Result<ChainSummary> {
    let post = draws.post_burn_in();
    if post.is_empty() {
        return Err(Error::param("no post-burn-in sweeps to summarize"));
    }
    let c = post[0].sigma.nrows();
    let lag = |s: &[f64]| if s.len() >= 10 { lag1_autocorr(s, 0).ok().flatten() } else { None };
    let mut sigma = Vec::new();
    for i in 0..c {
        for j in i..c {
            let s: Vec<f64> = post.iter().map(|r| r.sigma[(i, j)]).collect();
            sigma.push(SigmaEntry { row: i, col: j, interval: Interval::of(&s)?, lag1: lag(&s) });
        }
    }
    let mean_tree_depth = (0..c)
        .map(|k| post.iter().map(|r| r.mean_depth[k]).sum::<f64>() / post.len() as f64)
        .collect();
    let mu: Vec<f64> = post.iter().map(|r| r.mu_l1).collect();
    Ok(ChainSummary {
        algorithm: draws.algorithm.clone(),
        sweeps: draws.trace.len(),
        burn_in: draws.burn_in,
        sigma,
        mean_tree_depth,
        lag1_mu_l1: lag(&mu),
        autocorrelation_estimator: "biased (denominator n)",
    })
}

/// Trace-normalized draws `Σ̃ / (trace(Σ̃)/C)` with `Σ̃ ~ IW(ν, Ψ)`, the
/// prior counterpart of the posterior covariance trace.
pub fn prior_sigma_draws(prior: &PriorConfig, n: usize, rng: &mut ChainRng) -> Result<Vec<DMatrix<f64>>> {
    let params = WishartParams::new(prior.nu, prior.psi.clone())?;
    let c = prior.psi.nrows() as f64;
    Ok((0..n)
        .map(|_| {
            let s = sample_inverse_wishart(&params, rng);
            let a = s.trace() / c;
            s / a
        })
        .collect())
}
