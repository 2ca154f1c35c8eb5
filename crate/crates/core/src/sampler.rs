//! The three posterior samplers as one sweep state machine.
//!
//! A sweep is Step 1 (latent utilities, plus the working expansion parameter
//! α₁² where the algorithm has one), Step 2 (backfitting every tree) and
//! Step 3 (covariance draw with trace normalization). The algorithms differ
//! only in where α₁ enters, which is what the [`Algorithm`] trait captures;
//! implementations are registered by name in an [`AlgorithmRegistry`].

use std::collections::BTreeMap;
use std::sync::Arc;

use log::warn;
use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::data::{Dataset, LabelMap};
use crate::dists::{
    sample_alpha_sq, sample_inverse_wishart, sample_truncated_normal, ConditionalCoefs,
    TruncationInterval, WishartParams,
};
use crate::error::{Error, Result};
use crate::trees::{
    leaf_conjugate_update, mh_step, BinnedCovariates, CutGrid, Forest, Scratch, TreePrior,
};
use crate::ChainRng;
use rand::SeedableRng;

const TRACE_TOL: f64 = 1e-10;
const MAX_CONDITION: f64 = 1e12;
const JITTER: f64 = 1e-10;

/// Where the working expansion parameter enters a sweep.
pub trait Algorithm: Send + Sync {
    fn name(&self) -> &str;

    /// Step 1(a): α₁² for this sweep, or `None` when the algorithm has no
    /// working parameter (the rng is then left untouched).
    fn draw_expansion(
        &self,
        prior: &PriorConfig,
        sigma: &DMatrix<f64>,
        rng: &mut ChainRng,
    ) -> Result<Option<f64>>;

    /// Step 2 fits the trees to `α₁W` with noise variance `α₁²τ²` instead of
    /// to `W` with `τ²`.
    fn trees_on_expanded_scale(&self) -> bool;
}

/// Trees fit to the expanded utilities `α₁W`.
#[derive(Debug, Default, Clone, Copy)]
pub struct Kd;

/// Trees fit to normalized utilities; α₁ only enters the covariance update.
#[derive(Debug, Default, Clone, Copy)]
pub struct P1;

/// No working parameter in Step 1.
#[derive(Debug, Default, Clone, Copy)]
pub struct P2;

fn prior_expansion(prior: &PriorConfig, sigma: &DMatrix<f64>, rng: &mut ChainRng) -> Result<Option<f64>> {
    sample_alpha_sq(prior.nu, prior.psi.nrows(), &prior.psi, sigma, rng).map(Some)
}

impl Algorithm for Kd {
    fn name(&self) -> &str {
        "kd"
    }
    fn draw_expansion(&self, prior: &PriorConfig, sigma: &DMatrix<f64>, rng: &mut ChainRng) -> Result<Option<f64>> {
        prior_expansion(prior, sigma, rng)
    }
    fn trees_on_expanded_scale(&self) -> bool {
        true
    }
}

impl Algorithm for P1 {
    fn name(&self) -> &str {
        "p1"
    }
    fn draw_expansion(&self, prior: &PriorConfig, sigma: &DMatrix<f64>, rng: &mut ChainRng) -> Result<Option<f64>> {
        prior_expansion(prior, sigma, rng)
    }
    fn trees_on_expanded_scale(&self) -> bool {
        false
    }
}

impl Algorithm for P2 {
    fn name(&self) -> &str {
        "p2"
    }
    fn draw_expansion(&self, _: &PriorConfig, _: &DMatrix<f64>, _: &mut ChainRng) -> Result<Option<f64>> {
        Ok(None)
    }
    fn trees_on_expanded_scale(&self) -> bool {
        false
    }
}

/// Wraps an algorithm with α₁² pinned to a constant instead of drawn.
pub struct FixedExpansion {
    inner: Arc<dyn Algorithm>,
    alpha_sq: f64,
    name: String,
}

impl FixedExpansion {
    pub fn new(inner: Arc<dyn Algorithm>, alpha_sq: f64) -> Self {
        let name = format!("{}[alpha^2={alpha_sq}]", inner.name());
        Self { inner, alpha_sq, name }
    }
}

impl Algorithm for FixedExpansion {
    fn name(&self) -> &str {
        &self.name
    }
    fn draw_expansion(&self, _: &PriorConfig, _: &DMatrix<f64>, _: &mut ChainRng) -> Result<Option<f64>> {
        Ok(Some(self.alpha_sq))
    }
    fn trees_on_expanded_scale(&self) -> bool {
        self.inner.trees_on_expanded_scale()
    }
}

/// Algorithms by name.
#[derive(Clone, Default)]
pub struct AlgorithmRegistry {
    entries: BTreeMap<String, Arc<dyn Algorithm>>,
}

impl AlgorithmRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `kd`, `p1` and `p2`.
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register(Arc::new(Kd));
        r.register(Arc::new(P1));
        r.register(Arc::new(P2));
        r
    }

    pub fn register(&mut self, algorithm: Arc<dyn Algorithm>) {
        self.entries.insert(algorithm.name().to_ascii_lowercase(), algorithm);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Algorithm>> {
        self.entries
            .get(&name.to_ascii_lowercase())
            .cloned()
            .ok_or_else(|| Error::UnknownAlgorithm(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Priors: inverse-Wishart on the unnormalized covariance plus the tree prior.
#[derive(Debug, Clone)]
pub struct PriorConfig {
    pub nu: f64,
    pub psi: DMatrix<f64>,
    pub tree_prior: TreePrior,
    pub num_trees: usize,
}

impl PriorConfig {
    /// `ν = C + 1`, `Ψ = I`, default tree prior for `num_trees` trees.
    pub fn new(latent_dim: usize, num_trees: usize) -> Self {
        Self {
            nu: latent_dim as f64 + 1.0,
            psi: DMatrix::identity(latent_dim, latent_dim),
            tree_prior: TreePrior::for_num_trees(num_trees),
            num_trees,
        }
    }

    /// `ν = C + dof_offset` and unit-diagonal `Ψ` with constant off-diagonal.
    pub fn with_psi_offdiag(mut self, dof_offset: f64, offdiag: f64) -> Self {
        let c = self.psi.nrows();
        self.nu = c as f64 + dof_offset;
        self.psi = DMatrix::from_fn(c, c, |i, j| if i == j { 1.0 } else { offdiag });
        self
    }

    pub fn validate(&self, latent_dim: usize) -> Result<()> {
        if self.psi.nrows() != latent_dim || self.psi.ncols() != latent_dim {
            return Err(Error::param(format!(
                "Psi is {}x{} but the outcome has {latent_dim} latent dimensions",
                self.psi.nrows(),
                self.psi.ncols()
            )));
        }
        if !(self.nu >= latent_dim as f64 + 1.0) {
            return Err(Error::param(format!("nu must be at least C+1 = {}", latent_dim + 1)));
        }
        WishartParams::new(self.nu, self.psi.clone())?;
        if self.num_trees == 0 {
            return Err(Error::param("need at least one tree per dimension"));
        }
        self.tree_prior.validate()
    }
}

/// Run length and bookkeeping options for one chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub burn_in: usize,
    /// Kept sweeps after burn-in (before thinning).
    pub draws: usize,
    /// Keep every `thin`-th post-burn-in sweep.
    pub thin: usize,
    /// Store forests of kept sweeps in [`PosteriorDraws`].
    pub store_forests: bool,
    /// Verify sweep invariants after every sweep.
    pub check_invariants: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { burn_in: 50_000, draws: 30_000, thin: 1, store_forests: true, check_invariants: true }
    }
}

/// The sampler's current state. Latents and means are stored per latent
/// dimension (`w[j][i]`).
#[derive(Debug, Clone)]
pub struct SamplerState {
    /// Latent utilities drawn in Step 1; consistent with the observed outcomes.
    pub w: Vec<Vec<f64>>,
    /// Normalized means μ = G(X; θ).
    pub mu: Vec<Vec<f64>>,
    /// Trace-normalized covariance.
    pub sigma: DMatrix<f64>,
    pub forests: Vec<Forest>,
    pub alpha1_sq: f64,
    pub alpha3_sq: f64,
    /// `μ = forest output × mean_scale` (1/α₁ when trees live on the expanded scale).
    pub mean_scale: f64,
    /// Step 3(c) rescaled utilities `μ + ε̃/α₃`, the conditioning values for
    /// the next Step 1.
    pub w_carry: Vec<Vec<f64>>,
    /// Expanded utilities `α₁W` of the current sweep.
    pub w_expanded: Vec<Vec<f64>>,
    /// Forest outputs per dimension, in the forests' own scale.
    fit: Vec<Vec<f64>>,
    assign: Vec<Vec<Vec<u32>>>,
}

/// Per-sweep summaries recorded for every iteration (burn-in included).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub sigma: DMatrix<f64>,
    /// Mean tree depth per latent dimension.
    pub mean_depth: Vec<f64>,
    /// `‖μ‖₁ / N`.
    pub mu_l1: f64,
    pub alpha1_sq: f64,
    pub alpha3_sq: f64,
}

/// Model parameters of one kept sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct KeptDraw {
    pub iteration: usize,
    pub sigma: DMatrix<f64>,
    pub forests: Vec<Forest>,
    pub mean_scale: f64,
}

/// Everything one chain emits.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub algorithm: String,
    pub burn_in: usize,
    pub thin: usize,
    pub trace: Vec<SweepRecord>,
    pub kept: Vec<KeptDraw>,
    pub grid: CutGrid,
    pub labels: LabelMap,
}

impl PosteriorDraws {
    /// Trace records of the post-burn-in sweeps.
    pub fn post_burn_in(&self) -> &[SweepRecord] {
        &self.trace[self.burn_in.min(self.trace.len())..]
    }

    /// Post-burn-in series of one covariance entry.
    pub fn sigma_series(&self, i: usize, j: usize) -> Vec<f64> {
        self.post_burn_in().iter().map(|r| r.sigma[(i, j)]).collect()
    }
}

/// A kept sweep as seen by a streaming consumer.
pub struct DrawView<'a> {
    pub iteration: usize,
    pub sigma: &'a DMatrix<f64>,
    pub forests: &'a [Forest],
    pub mean_scale: f64,
    pub mu: &'a [Vec<f64>],
}

/// Outcome code `s` (0 = reference) forces which interval for coordinate `j`
/// given the other coordinates of the row.
fn latent_interval(s: usize, j: usize, row: &[f64]) -> Result<TruncationInterval> {
    if s == 0 {
        TruncationInterval::below(0.0)
    } else if s == j + 1 {
        let mut lower = 0.0f64;
        for (k, &v) in row.iter().enumerate() {
            if k != j {
                lower = lower.max(v);
            }
        }
        TruncationInterval::above(lower)
    } else {
        TruncationInterval::below(row[s - 1])
    }
}

/// True when `row` maps to outcome code `s`: all negative for the reference,
/// otherwise coordinate `s` is non-negative and maximal.
pub fn consistent_with_outcome(s: usize, row: &[f64]) -> bool {
    if s == 0 {
        row.iter().all(|&v| v < 0.0)
    } else {
        let top = row[s - 1];
        top >= 0.0 && row.iter().all(|&v| v <= top)
    }
}

/// `Σ_i ε_i ε_iᵀ` for residuals stored per dimension.
pub fn scatter_matrix(residuals: &[Vec<f64>]) -> DMatrix<f64> {
    let c = residuals.len();
    let mut out = DMatrix::zeros(c, c);
    for a in 0..c {
        for b in 0..=a {
            let s: f64 = residuals[a].iter().zip(&residuals[b]).map(|(x, y)| x * y).sum();
            out[(a, b)] = s;
            out[(b, a)] = s;
        }
    }
    out
}

/// Step 3(a)-(b) for given residuals: draws `Σ̃ ~ IW(N + ν, Ψ + Σ ε̃ε̃ᵀ)` and
/// returns `(Σ̃ / α₃², α₃²)` with `α₃² = trace(Σ̃)/C`.
pub fn draw_normalized_sigma(
    residuals: &[Vec<f64>],
    prior: &PriorConfig,
    rng: &mut ChainRng,
) -> Result<(DMatrix<f64>, f64)> {
    let n = residuals.first().map_or(0, Vec::len);
    draw_normalized_sigma_from_scatter(&scatter_matrix(residuals), n, prior, rng)
}

/// [`draw_normalized_sigma`] from a precomputed scatter matrix of `n` residual rows.
pub fn draw_normalized_sigma_from_scatter(
    scatter: &DMatrix<f64>,
    n: usize,
    prior: &PriorConfig,
    rng: &mut ChainRng,
) -> Result<(DMatrix<f64>, f64)> {
    let c = scatter.nrows();
    let params = WishartParams::new(n as f64 + prior.nu, &prior.psi + scatter)?;
    let mut sigma_tilde = sample_inverse_wishart(&params, rng);
    let eig = SymmetricEigen::new(sigma_tilde.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        warn!("ill-conditioned covariance draw (eigenvalues {lo:e}..{hi:e}); adding jitter");
        for k in 0..c {
            sigma_tilde[(k, k)] += JITTER;
        }
    }
    let alpha3_sq = sigma_tilde.trace() / c as f64;
    Ok((sigma_tilde / alpha3_sq, alpha3_sq))
}

/// One chain of one algorithm over one dataset.
pub struct Sampler<'a> {
    data: &'a Dataset,
    prior: PriorConfig,
    algorithm: Arc<dyn Algorithm>,
    grid: CutGrid,
    bins: BinnedCovariates,
    state: SamplerState,
    scratch: Scratch,
    coefs: ConditionalCoefs,
    iteration: usize,
    rng: ChainRng,
}

impl<'a> Sampler<'a> {
    /// Step 0: Σ = I, zero stumps, α = 1, latents drawn once from their
    /// truncated conditionals around μ = 0.
    pub fn new(
        data: &'a Dataset,
        prior: PriorConfig,
        algorithm: Arc<dyn Algorithm>,
        mut rng: ChainRng,
    ) -> Result<Self> {
        let c = data.latent_dim();
        let n = data.len();
        if n == 0 {
            return Err(Error::InvalidData("dataset is empty".into()));
        }
        if let Some(code) = data.code_counts().iter().position(|&k| k == 0) {
            return Err(Error::InvalidData(format!(
                "outcome level '{}' is never observed",
                data.labels().label_of_code(code)
            )));
        }
        prior.validate(c)?;
        let grid = CutGrid::from_covariates(data.x(), prior.tree_prior.cutpoint_grid_size);
        let bins = BinnedCovariates::new(data.x(), &grid)?;
        let sigma = DMatrix::identity(c, c);
        let coefs = ConditionalCoefs::new(&sigma)?;
        let mut w_carry = vec![vec![-1.0; n]; c];
        for (i, &s) in data.outcome().iter().enumerate() {
            if s > 0 {
                w_carry[s - 1][i] = 1.0;
            }
        }
        let zeros = vec![vec![0.0; n]; c];
        let m = prior.num_trees;
        let state = SamplerState {
            w: w_carry.clone(),
            mu: zeros.clone(),
            sigma,
            forests: (0..c).map(|j| Forest::stumps(m, j)).collect(),
            alpha1_sq: 1.0,
            alpha3_sq: 1.0,
            mean_scale: 1.0,
            w_carry,
            w_expanded: zeros.clone(),
            fit: zeros,
            assign: vec![vec![vec![0; n]; m]; c],
        };
        let mut sampler = Self {
            data,
            prior,
            algorithm,
            grid,
            bins,
            state,
            scratch: Scratch::default(),
            coefs,
            iteration: 0,
            rng: ChainRng::from_seed([0; 32]),
        };
        sampler.draw_latents(&mut rng)?;
        sampler.state.w_carry = sampler.state.w.clone();
        sampler.rng = rng;
        Ok(sampler)
    }

    pub fn state(&self) -> &SamplerState {
        &self.state
    }

    pub fn grid(&self) -> &CutGrid {
        &self.grid
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn algorithm(&self) -> &dyn Algorithm {
        self.algorithm.as_ref()
    }

    pub fn rng_mut(&mut self) -> &mut ChainRng {
        &mut self.rng
    }

    /// Gibbs pass over every `W_ij` (rows outer, coordinates inner) from its
    /// truncated univariate conditional, starting from the carried utilities.
    fn draw_latents(&mut self, rng: &mut ChainRng) -> Result<()> {
        let c = self.data.latent_dim();
        let sds: Vec<f64> = (0..c).map(|j| self.coefs.variance(j).sqrt()).collect();
        let mut row = vec![0.0; c];
        let mut mu_row = vec![0.0; c];
        let st = &mut self.state;
        for (i, &s) in self.data.outcome().iter().enumerate() {
            for j in 0..c {
                row[j] = st.w_carry[j][i];
                mu_row[j] = st.mu[j][i];
            }
            for j in 0..c {
                let mean = self.coefs.mean(j, &mu_row, &row);
                let iv = latent_interval(s, j, &row)?;
                row[j] = sample_truncated_normal(mean, sds[j], &iv, rng)?;
            }
            for j in 0..c {
                st.w[j][i] = row[j];
            }
        }
        Ok(())
    }

    /// Step 1: α₁² (if any) from its conditional prior, then the latent
    /// utilities, then `W̃ = α₁W`.
    pub fn step1_draw_latents(&mut self) -> Result<()> {
        self.coefs = ConditionalCoefs::new(&self.state.sigma)?;
        let alpha = self.algorithm.draw_expansion(&self.prior, &self.state.sigma, &mut self.rng)?;
        self.state.alpha1_sq = alpha.unwrap_or(1.0);
        let mut rng = std::mem::replace(&mut self.rng, ChainRng::from_seed([0; 32]));
        let res = self.draw_latents(&mut rng);
        self.rng = rng;
        res?;
        let a1 = self.state.alpha1_sq.sqrt();
        let st = &mut self.state;
        for (we, w) in st.w_expanded.iter_mut().zip(&st.w) {
            for (e, &v) in we.iter_mut().zip(w) {
                *e = a1 * v;
            }
        }
        Ok(())
    }

    /// Step 2: backfits every tree (trees outer, dimensions inner) against
    /// its partial residual, which removes the other trees of its dimension
    /// and the conditional-regression term on the other dimensions.
    pub fn step2_update_forests(&mut self) -> Result<()> {
        let c = self.data.latent_dim();
        let n = self.data.len();
        let m = self.prior.num_trees;
        let expanded = self.algorithm.trees_on_expanded_scale();
        let noise_scale = if expanded { self.state.alpha1_sq } else { 1.0 };
        let tree_prior = self.prior.tree_prior;
        let st = &mut self.state;
        let target = if expanded { &st.w_expanded } else { &st.w };
        let mut residual = vec![0.0; n];
        let mut partial = vec![0.0; n];
        for b in 0..m {
            for j in 0..c {
                let beta = self.coefs.coefs(j);
                let noise_var = noise_scale * self.coefs.variance(j);
                {
                    let tree = &st.forests[j].trees[b];
                    let assign = &st.assign[j][b];
                    for i in 0..n {
                        let mut cross = 0.0;
                        for k in 0..c {
                            if k != j {
                                cross += beta[k] * (target[k][i] - st.fit[k][i]);
                            }
                        }
                        partial[i] = st.fit[j][i] - tree.leaf_value(assign[i] as usize);
                        residual[i] = target[j][i] - partial[i] - cross;
                    }
                }
                let tree = &mut st.forests[j].trees[b];
                let assign = &mut st.assign[j][b];
                mh_step(
                    tree,
                    assign,
                    &self.bins,
                    &residual,
                    noise_var,
                    &tree_prior,
                    &self.grid,
                    &mut self.scratch,
                    &mut self.rng,
                );
                leaf_conjugate_update(
                    tree,
                    assign,
                    &residual,
                    noise_var,
                    tree_prior.leaf_sd,
                    &mut self.scratch,
                    &mut self.rng,
                )?;
                let fit = &mut st.fit[j];
                for i in 0..n {
                    fit[i] = partial[i] + tree.leaf_value(assign[i] as usize);
                }
            }
        }
        st.mean_scale = if expanded { 1.0 / st.alpha1_sq.sqrt() } else { 1.0 };
        for (mu, fit) in st.mu.iter_mut().zip(&st.fit) {
            for (m, &f) in mu.iter_mut().zip(fit) {
                *m = f * st.mean_scale;
            }
        }
        Ok(())
    }

    /// Step 3: covariance draw on the algorithm's residuals, trace
    /// normalization, and `W ← μ + ε̃/α₃` for the next sweep.
    pub fn step3_update_sigma(&mut self) -> Result<()> {
        let st = &mut self.state;
        let residuals = step3_residuals(self.algorithm.as_ref(), st);
        let (sigma, alpha3_sq) = draw_normalized_sigma(&residuals, &self.prior, &mut self.rng)?;
        let a3 = alpha3_sq.sqrt();
        for (j, eps) in residuals.iter().enumerate() {
            for (i, &e) in eps.iter().enumerate() {
                st.w_carry[j][i] = st.mu[j][i] + e / a3;
            }
        }
        st.sigma = sigma;
        st.alpha3_sq = alpha3_sq;
        Ok(())
    }

    /// Steps 1 → 2 → 3, then the sweep-boundary checks.
    pub fn sweep(&mut self) -> Result<()> {
        self.step1_draw_latents()?;
        self.step2_update_forests()?;
        self.step3_update_sigma()?;
        self.iteration += 1;
        self.check_finite()
    }

    fn check_finite(&self) -> Result<()> {
        let st = &self.state;
        let bad = |what: &str| Error::NonFinite { iteration: self.iteration, what: what.to_string() };
        if st.sigma.iter().any(|v| !v.is_finite()) {
            return Err(bad("covariance"));
        }
        if !st.alpha1_sq.is_finite() || !st.alpha3_sq.is_finite() {
            return Err(bad("expansion parameter"));
        }
        if st.w.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("latent utilities"));
        }
        if st.mu.iter().flatten().any(|v| !v.is_finite()) {
            return Err(bad("tree means"));
        }
        Ok(())
    }

    /// Sweep-boundary invariants: trace(Σ) = C, Σ symmetric positive
    /// definite, and every latent row consistent with its outcome.
    pub fn check_invariants(&self) -> Result<()> {
        let st = &self.state;
        let c = self.data.latent_dim();
        let fail = |what: String| Error::NonFinite { iteration: self.iteration, what };
        if (st.sigma.trace() - c as f64).abs() > TRACE_TOL {
            return Err(fail(format!("trace(Sigma) = {} != {c}", st.sigma.trace())));
        }
        if st.sigma != st.sigma.transpose() {
            return Err(fail("Sigma is not symmetric".into()));
        }
        if Cholesky::new(st.sigma.clone()).is_none() {
            return Err(fail("Sigma is not positive definite".into()));
        }
        let mut row = vec![0.0; c];
        for (i, &s) in self.data.outcome().iter().enumerate() {
            for j in 0..c {
                row[j] = st.w[j][i];
            }
            if !consistent_with_outcome(s, &row) {
                return Err(fail(format!("latent row {i} {row:?} inconsistent with outcome code {s}")));
            }
        }
        Ok(())
    }

    /// Summary of the current sweep.
    pub fn record(&self) -> SweepRecord {
        let st = &self.state;
        let n = self.data.len() as f64;
        SweepRecord {
            sigma: st.sigma.clone(),
            mean_depth: st.forests.iter().map(Forest::mean_depth).collect(),
            mu_l1: st.mu.iter().flatten().map(|v| v.abs()).sum::<f64>() / n,
            alpha1_sq: st.alpha1_sq,
            alpha3_sq: st.alpha3_sq,
        }
    }

    pub fn view(&self) -> DrawView<'_> {
        DrawView {
            iteration: self.iteration,
            sigma: &self.state.sigma,
            forests: &self.state.forests,
            mean_scale: self.state.mean_scale,
            mu: &self.state.mu,
        }
    }
}

/// Step 3 residuals: `α₁W − G(X;θ̃)` on the expanded scale, `α₁(W − μ)` for
/// an algorithm with a working parameter, `W − μ` otherwise.
fn step3_residuals(algorithm: &dyn Algorithm, st: &SamplerState) -> Vec<Vec<f64>> {
    let a1 = st.alpha1_sq.sqrt();
    if algorithm.trees_on_expanded_scale() {
        st.w_expanded
            .iter()
            .zip(&st.fit)
            .map(|(w, f)| w.iter().zip(f).map(|(w, f)| w - f).collect())
            .collect()
    } else {
        st.w
            .iter()
            .zip(&st.mu)
            .map(|(w, m)| w.iter().zip(m).map(|(w, m)| a1 * (w - m)).collect())
            .collect()
    }
}

/// Runs burn-in plus kept sweeps, calling `on_draw` for every kept sweep.
/// Per-sweep summaries of every iteration are returned; forests are stored
/// only when `config.store_forests` is set.
pub fn run_chain_with(
    data: &Dataset,
    prior: &PriorConfig,
    config: &ChainConfig,
    algorithm: Arc<dyn Algorithm>,
    rng: ChainRng,
    on_draw: &mut dyn FnMut(&DrawView<'_>) -> Result<()>,
) -> Result<PosteriorDraws> {
    let thin = config.thin.max(1);
    let mut sampler = Sampler::new(data, prior.clone(), algorithm, rng)?;
    let total = config.burn_in + config.draws;
    let mut trace = Vec::with_capacity(total);
    let mut kept = Vec::new();
    for it in 0..total {
        sampler.sweep()?;
        if config.check_invariants {
            sampler.check_invariants()?;
        }
        trace.push(sampler.record());
        if it >= config.burn_in && (it - config.burn_in) % thin == 0 {
            on_draw(&sampler.view())?;
            if config.store_forests {
                let st = sampler.state();
                kept.push(KeptDraw {
                    iteration: sampler.iteration(),
                    sigma: st.sigma.clone(),
                    forests: st.forests.clone(),
                    mean_scale: st.mean_scale,
                });
            }
        }
    }
    Ok(PosteriorDraws {
        algorithm: sampler.algorithm().name().to_string(),
        burn_in: config.burn_in,
        thin,
        trace,
        kept,
        grid: sampler.grid().clone(),
        labels: data.labels().clone(),
    })
}

/// [`run_chain_with`] without a streaming consumer.
pub fn run_chain(
    data: &Dataset,
    prior: &PriorConfig,
    config: &ChainConfig,
    algorithm: Arc<dyn Algorithm>,
    rng: ChainRng,
) -> Result<PosteriorDraws> {
    run_chain_with(data, prior, config, algorithm, rng, &mut |_| Ok(()))
}
