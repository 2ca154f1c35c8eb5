//! Synthetic three-category data with two latent utilities, and the exact
//! outcome probabilities of the bivariate model as a function of correlation.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::data::{Covariates, Dataset, LabelMap};
use crate::error::{Error, Result};
use crate::normal::bvn_cdf;
use crate::ChainRng;

/// Covariate names of generated data, in column order.
pub const COVARIATE_NAMES: [&str; 6] = ["U1", "U2", "U3", "U4", "U5", "V"];

/// Outcome labels of generated data; "3" is the reference.
pub const LEVELS: [&str; 3] = ["1", "2", "3"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Roughly balanced outcome frequencies.
    Balanced,
    /// Reference category rare.
    Imbalanced,
}

impl Setting {
    pub fn from_number(k: u32) -> Result<Self> {
        match k {
            1 => Ok(Setting::Balanced),
            2 => Ok(Setting::Imbalanced),
            _ => Err(Error::param(format!("setting must be 1 or 2, got {k}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSpec {
    pub setting: Setting,
    pub n: usize,
    /// Correlation of the two latent utilities (unit variances).
    pub rho: f64,
}

impl SimSpec {
    pub fn new(setting: Setting, n: usize) -> Self {
        Self { setting, n, rho: 0.5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("sample size must be positive"));
        }
        if !(self.rho > -1.0 && self.rho < 1.0) {
            return Err(Error::param(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        Ok(())
    }
}

/// Latent means `(G₁, G₂)` for one covariate row `(U1..U5, V)`.
pub fn latent_means(setting: Setting, row: &[f64]) -> (f64, f64) {
    let (u1, u2, u3, u4, u5, v) = (row[0], row[1], row[2], row[3], row[4], row[5]);
    let g1 = 15.0 * (std::f64::consts::PI * u1 * u2).sin() + (u3 - 0.5).powi(2) - 10.0 * u4 - 5.0 * u5;
    let g2 = match setting {
        Setting::Balanced => (u3 - 0.5).powi(3) - 20.0 * u4 * u5 + 4.0 * v,
        Setting::Imbalanced => (u3 - 0.5).powi(2) - u4 * u5 + 4.0 * v,
    };
    (g1, g2)
}

/// Draws `W ~ N((g₁, g₂), [[1, ρ], [ρ, 1]])` and returns the index of the
/// implied label in [`LEVELS`].
pub fn draw_outcome(g1: f64, g2: f64, rho: f64, rng: &mut ChainRng) -> usize {
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let w1 = g1 + z1;
    let w2 = g2 + rho * z1 + (1.0 - rho * rho).sqrt() * z2;
    if w1 < 0.0 && w2 < 0.0 {
        2
    } else if w1 >= w2 {
        0
    } else {
        1
    }
}

/// Generates a dataset: covariates `U1..U5 ~ U(0,1)`, `V ~ U(0,2)`, outcome
/// labels "1", "2", "3" with "3" as reference.
pub fn generate(spec: &SimSpec, rng: &mut ChainRng) -> Result<Dataset> {
    spec.validate()?;
    let mut values = Vec::with_capacity(spec.n * 6);
    let mut outcome = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let mut row = [0.0; 6];
        for u in &mut row[..5] {
            *u = rng.random::<f64>();
        }
        row[5] = 2.0 * rng.random::<f64>();
        let (g1, g2) = latent_means(spec.setting, &row);
        outcome.push(LEVELS[draw_outcome(g1, g2, spec.rho, rng)]);
        values.extend_from_slice(&row);
    }
    let x = Covariates::new(COVARIATE_NAMES.iter().map(|s| s.to_string()).collect(), values)?;
    let labels = LabelMap::new(LEVELS.iter().map(|s| s.to_string()).collect(), "3")?;
    Dataset::from_labels(&outcome, x, labels)
}

/// `(P(S=1), P(S=2), P(S=3))` for latent means `(μ₁, μ₂)`, unit variances and
/// correlation `ρ`, with 3 the reference.
pub fn outcome_probs(mu1: f64, mu2: f64, rho: f64) -> Result<[f64; 3]> {
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::param(format!("rho must lie in (-1, 1), got {rho}")));
    }
    // S=1 iff W₂−W₁ ≤ 0 and −W₁ ≤ 0: a bivariate normal orthant with
    // variances 2(1−ρ), 1 and covariance 1−ρ.
    let sd = (2.0 * (1.0 - rho)).sqrt();
    let r = ((1.0 - rho) / 2.0).sqrt();
    let p1 = bvn_cdf((mu1 - mu2) / sd, mu1, r);
    let p2 = bvn_cdf((mu2 - mu1) / sd, mu2, r);
    let p3 = bvn_cdf(-mu1, -mu2, rho);
    Ok([p1, p2, p3])
}

/// One row per grid value: `(ρ, P(S=1), P(S=2), P(S=3))`.
pub fn outcome_probs_vs_rho(mu1: f64, mu2: f64, rho_grid: &[f64]) -> Result<Vec<[f64; 4]>> {
    rho_grid
        .iter()
        .map(|&rho| {
            let [a, b, c] = outcome_probs(mu1, mu2, rho)?;
            Ok([rho, a, b, c])
        })
        .collect()
}
