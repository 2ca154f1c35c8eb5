//! Brute-force oracles shared by the integration tests. Nothing here calls
//! the library's prior, likelihood or proposal-probability code.
#![allow(dead_code)]

use std::collections::HashMap;

use mpbart::trees::{swap_rules, BinnedCovariates, CutGrid, NodeRecord, SplitRule, Tree, TreePrior};
use mpbart::Covariates;
use nalgebra::{Cholesky, DMatrix, DVector};

pub struct TreeFixture {
    pub x: Covariates,
    pub grid: CutGrid,
    pub bins: BinnedCovariates,
    pub residuals: Vec<f64>,
    pub noise_var: f64,
    pub prior: TreePrior,
}

impl TreeFixture {
    pub fn new(x: Covariates, grid: CutGrid, residuals: Vec<f64>, noise_var: f64, prior: TreePrior) -> Self {
        let bins = BinnedCovariates::new(&x, &grid).unwrap();
        Self { x, grid, bins, residuals, noise_var, prior }
    }
}

/// Tree structure in preorder: `None` for a leaf, `(var, cut index)` for a split.
pub type Key = Vec<Option<(usize, usize)>>;

pub fn key(t: &Tree) -> Key {
    (0..t.n_nodes()).map(|i| t.rule(i).map(|r| (r.var, r.cut))).collect()
}

fn depth_of(t: &Tree, id: usize) -> usize {
    let mut d = 0;
    let mut n = id;
    while let Some(p) = t.parent(n) {
        d += 1;
        n = p;
    }
    d
}

/// Open value interval per predictor that reaches node `id`.
fn value_bounds(t: &Tree, id: usize, grid: &CutGrid) -> Vec<(f64, f64)> {
    let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); grid.n_vars()];
    let mut n = id;
    while let Some(p) = t.parent(n) {
        let r = t.rule(p).unwrap();
        let v = grid.value(r.var, r.cut);
        let (l, _) = t.children(p).unwrap();
        if n == l {
            b[r.var].1 = b[r.var].1.min(v);
        } else {
            b[r.var].0 = b[r.var].0.max(v);
        }
        n = p;
    }
    b
}

/// Cut indices per predictor usable at `id` (predictors with none omitted).
pub fn avail(t: &Tree, id: usize, grid: &CutGrid) -> Vec<(usize, Vec<usize>)> {
    value_bounds(t, id, grid)
        .into_iter()
        .enumerate()
        .filter_map(|(v, (lo, hi))| {
            let cuts: Vec<usize> =
                (0..grid.n_cuts(v)).filter(|&k| grid.value(v, k) > lo && grid.value(v, k) < hi).collect();
            (!cuts.is_empty()).then_some((v, cuts))
        })
        .collect()
}

pub fn log_prior(t: &Tree, grid: &CutGrid, prior: &TreePrior) -> f64 {
    let mut total = 0.0;
    for id in 0..t.n_nodes() {
        let p = prior.split_base * (1.0 + depth_of(t, id) as f64).powf(-prior.split_power);
        let a = avail(t, id, grid);
        match t.rule(id) {
            None => {
                if !a.is_empty() {
                    total += (1.0 - p).ln();
                }
            }
            Some(r) => match a.iter().find(|(v, _)| *v == r.var) {
                Some((_, cuts)) if cuts.contains(&r.cut) => {
                    total += p.ln() - (a.len() as f64).ln() - (cuts.len() as f64).ln();
                }
                _ => return f64::NEG_INFINITY,
            },
        }
    }
    total
}

fn leaf_of(t: &Tree, row: &[f64], grid: &CutGrid) -> usize {
    let mut n = 0;
    while let Some(r) = t.rule(n) {
        let (l, rt) = t.children(n).unwrap();
        n = if row[r.var] < grid.value(r.var, r.cut) { l } else { rt };
    }
    n
}

/// Full Gaussian log density of the residuals with leaf means integrated
/// out: `r ~ N(0, σ² I + σ_μ² Z Zᵀ)`; `-∞` if a leaf is empty.
pub fn log_lik(t: &Tree, fx: &TreeFixture) -> f64 {
    let n = fx.residuals.len();
    let leaf: Vec<usize> = (0..n).map(|i| leaf_of(t, fx.x.row(i), &fx.grid)).collect();
    for id in 0..t.n_nodes() {
        if t.is_leaf(id) && !leaf.contains(&id) {
            return f64::NEG_INFINITY;
        }
    }
    let s2 = fx.prior.leaf_sd * fx.prior.leaf_sd;
    let cov = DMatrix::from_fn(n, n, |i, k| {
        (if i == k { fx.noise_var } else { 0.0 }) + if leaf[i] == leaf[k] { s2 } else { 0.0 }
    });
    let chol = Cholesky::new(cov).unwrap();
    let r = DVector::from_column_slice(&fx.residuals);
    let quad = r.dot(&chol.solve(&r));
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * (n as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

pub fn log_target(t: &Tree, fx: &TreeFixture) -> f64 {
    let p = log_prior(t, &fx.grid, &fx.prior);
    if p == f64::NEG_INFINITY {
        return p;
    }
    p + log_lik(t, fx)
}

/// Every structure reachable in one move, with its total proposal probability.
pub fn neighbours(t: &Tree, fx: &TreeFixture) -> HashMap<Key, f64> {
    let m = fx.prior.moves;
    let grid = &fx.grid;
    let mut out: HashMap<Key, f64> = HashMap::new();
    let mut add = |t: Tree, p: f64| *out.entry(key(&t)).or_insert(0.0) += p;
    let n = t.n_nodes();

    let growable: Vec<(usize, Vec<(usize, Vec<usize>)>)> = (0..n)
        .filter(|&i| t.is_leaf(i))
        .map(|i| (i, avail(t, i, grid)))
        .filter(|(_, a)| !a.is_empty())
        .collect();
    for (leaf, a) in &growable {
        for (v, cuts) in a {
            for &c in cuts {
                let p = m.grow / growable.len() as f64 / a.len() as f64 / cuts.len() as f64;
                add(t.grow(*leaf, SplitRule { var: *v, cut: c }), p);
            }
        }
    }

    let internal: Vec<usize> = (0..n).filter(|&i| !t.is_leaf(i)).collect();
    let nog: Vec<usize> = internal
        .iter()
        .copied()
        .filter(|&i| {
            let (l, r) = t.children(i).unwrap();
            t.is_leaf(l) && t.is_leaf(r)
        })
        .collect();
    for &i in &nog {
        add(t.prune(i), m.prune / nog.len() as f64);
    }

    for &i in &internal {
        let a = avail(t, i, grid);
        for (v, cuts) in &a {
            for &c in cuts {
                let p = m.change / internal.len() as f64 / a.len() as f64 / cuts.len() as f64;
                add(t.with_rule(i, SplitRule { var: *v, cut: c }), p);
            }
        }
    }

    let mut pairs = Vec::new();
    for &i in &internal {
        let (l, r) = t.children(i).unwrap();
        for c in [l, r] {
            if !t.is_leaf(c) {
                pairs.push((i, c));
            }
        }
    }
    for &(p, c) in &pairs {
        add(swap_rules(t, p, c), m.swap / pairs.len() as f64);
    }
    out
}

/// Oracle log Metropolis-Hastings ratio for moving from `from` to `to`.
pub fn log_mh_ratio(from: &Tree, to: &Tree, fx: &TreeFixture) -> f64 {
    let target_to = log_target(to, fx);
    if target_to == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let fwd = neighbours(from, fx)[&key(to)];
    let bwd = neighbours(to, fx).get(&key(from)).copied().unwrap_or(0.0);
    target_to - log_target(from, fx) + bwd.ln() - fwd.ln()
}

/// Every tree on one predictor whose splits use cut indices in `(lo, hi)`.
pub fn all_trees_1d(lo: isize, hi: isize, grid: &CutGrid) -> Vec<Vec<NodeRecord>> {
    let mut out = vec![vec![NodeRecord::Leaf { value: 0.0 }]];
    for c in lo + 1..hi {
        for l in all_trees_1d(lo, c, grid) {
            for r in all_trees_1d(c, hi, grid) {
                let mut rec = vec![NodeRecord::Split { var: 0, cut: grid.value(0, c as usize) }];
                rec.extend(l.iter().cloned());
                rec.extend(r.iter().cloned());
                out.push(rec);
            }
        }
    }
    out
}

/// Mean and standard error of a stationary series by batch means.
pub fn batch_mean_se(series: &[f64], batches: usize) -> (f64, f64) {
    let b = series.len() / batches;
    let means: Vec<f64> = (0..batches).map(|k| series[k * b..(k + 1) * b].iter().sum::<f64>() / b as f64).collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let v = means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (m, (v / batches as f64).sqrt())
}

pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Mean and variance of `N(μ, σ²)` truncated to `(a, b)` by composite
/// Simpson quadrature of the density.
pub fn truncated_moments(mu: f64, sd: f64, a: f64, b: f64) -> (f64, f64) {
    let za = (a - mu) / sd;
    let zb = (b - mu) / sd;
    let lo = if za.is_finite() { za } else { zb - 40.0 };
    let hi = if zb.is_finite() { zb } else { za + 40.0 };
    let n = 400_000;
    let h = (hi - lo) / n as f64;
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for i in 0..=n {
        let z = lo + i as f64 * h;
        let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let f = w * (-0.5 * z * z).exp();
        s0 += f;
        s1 += f * z;
        s2 += f * z * z;
    }
    let m = s1 / s0;
    let v = s2 / s0 - m * m;
    (mu + sd * m, sd * sd * v)
}

/// Ten rows, two predictors with four grid cuts each, Gaussian residuals.
pub fn mh_fixture(seed: u64) -> TreeFixture {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let mut rng = mpbart::seeded_rng(seed);
    let rows: Vec<Vec<f64>> = (0..10).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    let x = Covariates::from_rows(vec!["a".into(), "b".into()], &rows).unwrap();
    let grid = CutGrid::from_covariates(&x, 4);
    let residuals = (0..10).map(|i| if rows[i][0] < 0.5 { 1.0 } else { -0.5 } + 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let mut prior = TreePrior::for_num_trees(1);
    prior.leaf_sd = 0.9;
    TreeFixture::new(x, grid, residuals, 0.6, prior)
}

/// Trees reached by random grow/change proposals that keep every leaf non-empty.
pub fn random_trees(fx: &TreeFixture, count: usize, seed: u64) -> Vec<Tree> {
    use mpbart::trees::{propose, MoveKind};
    use rand::Rng;
    let mut rng = mpbart::seeded_rng(seed);
    let mut out = vec![Tree::stump(0.0)];
    let mut t = Tree::stump(0.0);
    while out.len() < count {
        let kind = if rng.random::<f64>() < 0.7 { MoveKind::Grow } else { MoveKind::Change };
        if let Some(p) = propose(&t, kind, &fx.prior, &fx.grid, &mut rng) {
            if log_target(&p.candidate, fx).is_finite() {
                t = p.candidate;
                out.push(t.clone());
            }
        }
        if t.n_leaves() > 5 || rng.random::<f64>() < 0.1 {
            t = Tree::stump(0.0);
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct RatioCheck {
    pub compared: usize,
    pub both_rejected: usize,
    pub max_abs_err: f64,
    pub mismatches: usize,
}

/// Library acceptance ratios against [`log_mh_ratio`] for proposals of every
/// kind drawn from a set of random trees.
pub fn check_acceptance_ratios(seed: u64) -> RatioCheck {
    use mpbart::trees::{assign_rows, log_acceptance_ratio, propose, MoveKind, Scratch};
    let fx = mh_fixture(seed);
    let mut rng = mpbart::seeded_rng(seed + 1);
    let mut scratch = Scratch::default();
    let mut out = RatioCheck::default();
    let mut assign = Vec::new();
    for t in random_trees(&fx, 40, seed + 2) {
        assign_rows(&t, &fx.bins, &mut assign);
        for kind in [MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap] {
            for _ in 0..25 {
                let Some(p) = propose(&t, kind, &fx.prior, &fx.grid, &mut rng) else { continue };
                let got = log_acceptance_ratio(
                    &t, &assign, &p, &fx.bins, &fx.residuals, fx.noise_var, &fx.prior, &fx.grid, &mut scratch,
                );
                let want = log_mh_ratio(&t, &p.candidate, &fx);
                out.compared += 1;
                if got == f64::NEG_INFINITY || want == f64::NEG_INFINITY {
                    if got == want {
                        out.both_rejected += 1;
                    } else {
                        out.mismatches += 1;
                    }
                    continue;
                }
                let err = (got - want).abs();
                out.max_abs_err = out.max_abs_err.max(err);
                if err > 1e-12 {
                    out.mismatches += 1;
                }
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct VisitCheck {
    pub states: usize,
    pub steps: usize,
    /// Largest |frequency − posterior| / se over the states.
    pub max_z: f64,
    pub total_variation: f64,
}

/// Runs the library's structure chain on a one-predictor problem with three
/// cuts (15 possible trees) and compares visit frequencies with the exact
/// posterior.
pub fn check_enumerable_posterior(steps: usize, seed: u64) -> VisitCheck {
    use mpbart::trees::{assign_rows, mh_step, Scratch};
    let xs = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8];
    let x = Covariates::new(vec!["u".into()], xs.to_vec()).unwrap();
    let grid = CutGrid::from_cuts(vec![vec![0.25, 0.45, 0.65]]).unwrap();
    let residuals = vec![0.9, 1.1, -0.2, 0.1, 0.6, 0.4, -0.8, -1.0];
    let mut prior = TreePrior::for_num_trees(1);
    prior.leaf_sd = 0.8;
    let fx = TreeFixture::new(x, grid, residuals, 1.0, prior);

    let trees: Vec<Tree> =
        all_trees_1d(-1, 3, &fx.grid).iter().map(|r| Tree::from_records(r, &fx.grid).unwrap()).collect();
    let logs: Vec<f64> = trees.iter().map(|t| log_target(t, &fx)).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    let exact: Vec<f64> = logs.iter().map(|l| (l - top).exp() / z).collect();
    let index: HashMap<Key, usize> = trees.iter().enumerate().map(|(i, t)| (key(t), i)).collect();

    let mut rng = mpbart::seeded_rng(seed);
    let mut scratch = Scratch::default();
    let mut t = Tree::stump(0.0);
    let mut assign = Vec::new();
    assign_rows(&t, &fx.bins, &mut assign);
    let mut visits = vec![Vec::with_capacity(steps); trees.len()];
    for _ in 0..steps {
        mh_step(&mut t, &mut assign, &fx.bins, &fx.residuals, fx.noise_var, &fx.prior, &fx.grid, &mut scratch, &mut rng);
        let s = index[&key(&t)];
        for (k, v) in visits.iter_mut().enumerate() {
            v.push(if k == s { 1.0 } else { 0.0 });
        }
    }
    let mut max_z: f64 = 0.0;
    let mut tv = 0.0;
    for (k, v) in visits.iter().enumerate() {
        let (f, se) = batch_mean_se(v, 100);
        tv += 0.5 * (f - exact[k]).abs();
        max_z = max_z.max((f - exact[k]).abs() / se.max(1e-12));
    }
    VisitCheck { states: trees.len(), steps, max_z, total_variation: tv }
}
