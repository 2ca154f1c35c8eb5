//! Posterior predictive outcome draws and accuracy summaries.

use nalgebra::{Cholesky, DMatrix};

use crate::data::{Covariates, LabelMap};
use crate::dists::sample_mvn;
use crate::error::{Error, Result};
use crate::sampler::{KeptDraw, PosteriorDraws};
use crate::trees::{fitted, CutGrid, Forest};
use crate::ChainRng;

/// Outcome code implied by a latent vector: 0 (reference) when every
/// coordinate is negative, otherwise `1 + argmax` with ties to the lowest index.
pub fn outcome_of_latent(w: &[f64]) -> usize {
    let mut best = 0;
    for k in 1..w.len() {
        if w[k] > w[best] {
            best = k;
        }
    }
    if w[best] < 0.0 {
        0
    } else {
        best + 1
    }
}

/// Draws `Ŵ ~ MVN(mean, Σ)` given the lower Cholesky factor of `Σ` and
/// returns the implied outcome code.
pub fn predict_draw(mean: &[f64], sigma_chol: &DMatrix<f64>, rng: &mut ChainRng, buf: &mut [f64]) -> usize {
    sample_mvn(mean, sigma_chol, rng, buf);
    outcome_of_latent(buf)
}

/// Predicted outcome per observation and posterior draw, stored as indices
/// into the original level order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    n_obs: usize,
    n_draws: usize,
    /// Observation-major: `levels[i * n_draws + j]`.
    levels: Vec<u16>,
    labels: LabelMap,
}

impl PredictiveDraws {
    pub fn from_levels(n_obs: usize, n_draws: usize, levels: Vec<usize>, labels: LabelMap) -> Result<Self> {
        if levels.len() != n_obs * n_draws {
            return Err(Error::param(format!(
                "{} predictions do not form a {n_obs}x{n_draws} table",
                levels.len()
            )));
        }
        if levels.iter().any(|&l| l >= labels.levels().len()) {
            return Err(Error::param("predicted level outside the label set"));
        }
        let levels = levels.into_iter().map(|l| l as u16).collect();
        Ok(Self { n_obs, n_draws, levels, labels })
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn labels(&self) -> &LabelMap {
        &self.labels
    }

    /// Predicted level indices of observation `i` across draws.
    pub fn row(&self, i: usize) -> &[u16] {
        &self.levels[i * self.n_draws..(i + 1) * self.n_draws]
    }

    /// Per-level frequency of observation `i`, in original level order.
    pub fn frequencies(&self, i: usize) -> Vec<f64> {
        let mut counts = vec![0usize; self.labels.levels().len()];
        for &l in self.row(i) {
            counts[l as usize] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.n_draws as f64).collect()
    }

    /// Modal level of observation `i` and whether the mode was tied (ties go
    /// to the lowest original level index).
    pub fn mode(&self, i: usize) -> (usize, bool) {
        let mut counts = vec![0usize; self.labels.levels().len()];
        for &l in self.row(i) {
            counts[l as usize] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(0);
        let level = counts.iter().position(|&c| c == top).unwrap_or(0);
        let tied = counts.iter().filter(|&&c| c == top).count() > 1;
        (level, tied)
    }

    /// Concatenates the draws of another prediction over the same observations.
    pub fn append(&mut self, other: &PredictiveDraws) -> Result<()> {
        if other.n_obs != self.n_obs || other.labels != self.labels {
            return Err(Error::param("cannot merge predictions for different observations"));
        }
        let j = self.n_draws + other.n_draws;
        let mut levels = Vec::with_capacity(self.n_obs * j);
        for i in 0..self.n_obs {
            levels.extend_from_slice(self.row(i));
            levels.extend_from_slice(other.row(i));
        }
        self.levels = levels;
        self.n_draws = j;
        Ok(())
    }
}

/// Latent mean `G(X; θ)` per dimension for one kept draw.
pub fn draw_means(draw: &KeptDraw, x: &Covariates, grid: &CutGrid) -> Result<Vec<Vec<f64>>> {
    draw.forests
        .iter()
        .map(|f| {
            let mut g = fitted(f, x, grid)?;
            for v in &mut g {
                *v *= draw.mean_scale;
            }
            Ok(g)
        })
        .collect()
}

/// Accumulates one predictive outcome per observation for each posterior
/// draw fed to it, so forests need not be kept after use.
pub struct Predictor<'a> {
    x: &'a Covariates,
    grid: &'a CutGrid,
    labels: &'a LabelMap,
    /// Draw-major while accumulating.
    levels: Vec<u16>,
    n_draws: usize,
    mean: Vec<f64>,
    buf: Vec<f64>,
}

impl<'a> Predictor<'a> {
    pub fn new(x: &'a Covariates, grid: &'a CutGrid, labels: &'a LabelMap) -> Result<Self> {
        if x.n_cols() != grid.n_vars() {
            return Err(Error::InvalidData(format!(
                "model expects {} covariates, data has {}",
                grid.n_vars(),
                x.n_cols()
            )));
        }
        let c = labels.latent_dim();
        Ok(Self { x, grid, labels, levels: Vec::new(), n_draws: 0, mean: vec![0.0; c], buf: vec![0.0; c] })
    }

    /// Adds one draw: `μ = forest output × mean_scale`, outcomes from
    /// `MVN(μ, Σ)` per observation.
    pub fn add_draw(
        &mut self,
        forests: &[Forest],
        mean_scale: f64,
        sigma: &DMatrix<f64>,
        rng: &mut ChainRng,
    ) -> Result<()> {
        let c = self.labels.latent_dim();
        if forests.len() != c || sigma.nrows() != c {
            return Err(Error::param(format!("draw has {} forests for {c} latent dimensions", forests.len())));
        }
        let g = forests
            .iter()
            .map(|f| fitted(f, self.x, self.grid))
            .collect::<Result<Vec<_>>>()?;
        let chol = Cholesky::new(sigma.clone())
            .ok_or_else(|| Error::NotPositiveDefinite("covariance of a posterior draw".into()))?
            .l();
        for i in 0..self.x.n_rows() {
            for k in 0..c {
                self.mean[k] = g[k][i] * mean_scale;
            }
            let code = predict_draw(&self.mean, &chol, rng, &mut self.buf);
            self.levels.push(self.labels.level_of_code(code) as u16);
        }
        self.n_draws += 1;
        Ok(())
    }

    pub fn finish(self) -> PredictiveDraws {
        let n = self.x.n_rows();
        let jn = self.n_draws;
        let mut levels = vec![0u16; n * jn];
        for j in 0..jn {
            for i in 0..n {
                levels[i * jn + j] = self.levels[j * n + i];
            }
        }
        PredictiveDraws { n_obs: n, n_draws: jn, levels, labels: self.labels.clone() }
    }
}

/// One predictive outcome per observation for every kept draw.
pub fn predict_kept(
    kept: &[KeptDraw],
    grid: &CutGrid,
    labels: &LabelMap,
    x: &Covariates,
    rng: &mut ChainRng,
) -> Result<PredictiveDraws> {
    if kept.is_empty() {
        return Err(Error::param("no stored posterior draws to predict from"));
    }
    let mut p = Predictor::new(x, grid, labels)?;
    for d in kept {
        p.add_draw(&d.forests, d.mean_scale, &d.sigma, rng)?;
    }
    Ok(p.finish())
}

/// [`predict_kept`] over a chain's stored draws.
pub fn predict(draws: &PosteriorDraws, x: &Covariates, rng: &mut ChainRng) -> Result<PredictiveDraws> {
    predict_kept(&draws.kept, &draws.grid, &draws.labels, x, rng)
}

fn check_dims(observed: &[usize], draws: &PredictiveDraws) -> Result<()> {
    if draws.n_draws == 0 {
        return Err(Error::param("accuracy needs at least one posterior draw"));
    }
    if observed.len() != draws.n_obs {
        return Err(Error::param(format!(
            "{} observed outcomes but predictions for {}",
            observed.len(),
            draws.n_obs
        )));
    }
    Ok(())
}

/// Posterior agreement: share of (observation, draw) pairs whose prediction
/// equals the observed level. `observed` holds original level indices.
pub fn accuracy_agreement(observed: &[usize], draws: &PredictiveDraws) -> Result<f64> {
    check_dims(observed, draws)?;
    let hits: usize = observed
        .iter()
        .enumerate()
        .map(|(i, &s)| draws.row(i).iter().filter(|&&p| p as usize == s).count())
        .sum();
    Ok(hits as f64 / (draws.n_obs as f64 * draws.n_draws as f64))
}

/// Mode accuracy plus the number of observations with a tied mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeAccuracy {
    pub accuracy: f64,
    pub ties: usize,
}

/// Share of observations whose modal prediction equals the observed level.
pub fn accuracy_mode(observed: &[usize], draws: &PredictiveDraws) -> Result<ModeAccuracy> {
    check_dims(observed, draws)?;
    let mut hits = 0;
    let mut ties = 0;
    for (i, &s) in observed.iter().enumerate() {
        let (m, tied) = draws.mode(i);
        hits += usize::from(m == s);
        ties += usize::from(tied);
    }
    Ok(ModeAccuracy { accuracy: hits as f64 / draws.n_obs as f64, ties })
}
