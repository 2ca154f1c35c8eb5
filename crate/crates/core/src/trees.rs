//! Regression trees for the sum-of-trees means.
//!
//! Trees split on a per-predictor grid of cutpoints; a row goes left at a
//! split `(var, cut)` when its value is strictly below the cutpoint. During
//! fitting covariates are pre-binned against the grid so routing compares
//! small integers.
//!
//! Structure moves are Metropolis-Hastings steps (grow, prune, change, swap)
//! targeting prior × integrated leaf likelihood; leaf means are then drawn
//! from their Gaussian conjugate posteriors.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Covariates;
use crate::error::{Error, Result};

/// Cutpoints per predictor, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutGrid {
    cuts: Vec<Vec<f64>>,
}

impl CutGrid {
    /// Up to `grid_size` cutpoints per column: midpoints between distinct
    /// values when a column has few of them, otherwise equally spaced
    /// quantiles of the column.
    pub fn from_covariates(x: &Covariates, grid_size: usize) -> Self {
        let cuts = (0..x.n_cols())
            .map(|k| {
                let mut col: Vec<f64> = x.column(k).collect();
                col.sort_by(|a, b| a.total_cmp(b));
                col.dedup();
                column_cuts(&col, grid_size)
            })
            .collect();
        Self { cuts }
    }

    pub fn from_cuts(cuts: Vec<Vec<f64>>) -> Result<Self> {
        for (k, c) in cuts.iter().enumerate() {
            if c.windows(2).any(|w| !(w[0] < w[1])) || c.iter().any(|v| !v.is_finite()) {
                return Err(Error::param(format!("cutpoints of predictor {k} must be finite and increasing")));
            }
        }
        Ok(Self { cuts })
    }

    pub fn n_vars(&self) -> usize {
        self.cuts.len()
    }

    pub fn n_cuts(&self, var: usize) -> usize {
        self.cuts[var].len()
    }

    pub fn value(&self, var: usize, cut: usize) -> f64 {
        self.cuts[var][cut]
    }

    pub fn cuts(&self, var: usize) -> &[f64] {
        &self.cuts[var]
    }

    /// Number of cutpoints `<= x`; a row goes left at `cut` iff `bin <= cut`.
    pub fn bin(&self, var: usize, x: f64) -> u16 {
        self.cuts[var].partition_point(|&c| c <= x) as u16
    }

    fn index_of(&self, var: usize, value: f64) -> Option<usize> {
        self.cuts.get(var)?.iter().position(|&c| c == value)
    }
}

fn column_cuts(sorted_unique: &[f64], grid_size: usize) -> Vec<f64> {
    let n = sorted_unique.len();
    if n < 2 || grid_size == 0 {
        return Vec::new();
    }
    if n - 1 <= grid_size {
        return sorted_unique.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    }
    let mut cuts: Vec<f64> = (1..=grid_size)
        .map(|q| {
            let pos = q as f64 / (grid_size + 1) as f64 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            let hi = (lo + 1).min(n - 1);
            let v = sorted_unique[lo] + frac * (sorted_unique[hi] - sorted_unique[lo]);
            // keep the cut strictly above the smallest value so both sides can be non-empty
            if v <= sorted_unique[0] {
                0.5 * (sorted_unique[0] + sorted_unique[1])
            } else {
                v
            }
        })
        .collect();
    cuts.dedup();
    cuts
}

/// Covariates binned against a [`CutGrid`], row-major.
#[derive(Debug, Clone)]
pub struct BinnedCovariates {
    n_vars: usize,
    bins: Vec<u16>,
}

impl BinnedCovariates {
    pub fn new(x: &Covariates, grid: &CutGrid) -> Result<Self> {
        if x.n_cols() != grid.n_vars() {
            return Err(Error::InvalidData(format!(
                "{} covariates but the cutpoint grid has {}",
                x.n_cols(),
                grid.n_vars()
            )));
        }
        let mut bins = Vec::with_capacity(x.n_rows() * x.n_cols());
        for i in 0..x.n_rows() {
            for (k, &v) in x.row(i).iter().enumerate() {
                bins.push(grid.bin(k, v));
            }
        }
        Ok(Self {
            n_vars: x.n_cols(),
            bins,
        })
    }

    pub fn n_rows(&self) -> usize {
        if self.n_vars == 0 {
            0
        } else {
            self.bins.len() / self.n_vars
        }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[u16] {
        &self.bins[i * self.n_vars..(i + 1) * self.n_vars]
    }
}

/// Split on predictor `var` at grid cutpoint index `cut`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SplitRule {
    pub var: usize,
    pub cut: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum NodeKind {
    Leaf { value: f64 },
    Split { rule: SplitRule, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq)]
struct Node {
    kind: NodeKind,
    parent: Option<usize>,
    depth: usize,
}

/// A binary regression tree. Node 0 is the root; nodes are stored in
/// depth-first preorder with no unused slots.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

/// One node of a serialized tree, in depth-first preorder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NodeRecord {
    Split { var: usize, cut: f64 },
    Leaf { value: f64 },
}

impl Tree {
    pub fn stump(value: f64) -> Self {
        Self {
            nodes: vec![Node {
                kind: NodeKind::Leaf { value },
                parent: None,
                depth: 0,
            }],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_leaf(&self, id: usize) -> bool {
        matches!(self.nodes[id].kind, NodeKind::Leaf { .. })
    }

    pub fn node_depth(&self, id: usize) -> usize {
        self.nodes[id].depth
    }

    pub fn parent(&self, id: usize) -> Option<usize> {
        self.nodes[id].parent
    }

    pub fn rule(&self, id: usize) -> Option<SplitRule> {
        match self.nodes[id].kind {
            NodeKind::Split { rule, .. } => Some(rule),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn children(&self, id: usize) -> Option<(usize, usize)> {
        match self.nodes[id].kind {
            NodeKind::Split { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn leaf_value(&self, id: usize) -> f64 {
        match self.nodes[id].kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    pub fn set_leaf_value(&mut self, id: usize, value: f64) {
        match &mut self.nodes[id].kind {
            NodeKind::Leaf { value: v } => *v = value,
            NodeKind::Split { .. } => panic!("node {id} is not a leaf"),
        }
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.kind, NodeKind::Leaf { .. })).count()
    }

    pub fn internal_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| !self.is_leaf(i)).collect()
    }

    /// Internal nodes whose children are both leaves (prunable).
    pub fn nog_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| matches!(self.children(i), Some((l, r)) if self.is_leaf(l) && self.is_leaf(r)))
            .collect()
    }

    /// Depth of the deepest leaf; 0 for a stump.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    /// Leaf reached by a pre-binned row.
    #[inline]
    pub fn route_binned(&self, bins: &[u16]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Split { rule, left, right } => {
                    id = if bins[rule.var] as usize <= rule.cut { left } else { right };
                }
            }
        }
    }

    /// Leaf reached by a raw covariate row.
    pub fn route(&self, x: &[f64], grid: &CutGrid) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id].kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Split { rule, left, right } => {
                    id = if x[rule.var] < grid.value(rule.var, rule.cut) { left } else { right };
                }
            }
        }
    }

    /// Output of the tree for a raw covariate row.
    pub fn predict(&self, x: &[f64], grid: &CutGrid) -> f64 {
        self.leaf_value(self.route(x, grid))
    }

    /// Replaces leaf `leaf` by a split with two leaves carrying its value.
    pub fn grow(&self, leaf: usize, rule: SplitRule) -> Tree {
        let value = self.leaf_value(leaf);
        self.rebuild(|id, _| {
            if id == leaf {
                Rebuild::Split(rule, value)
            } else {
                Rebuild::Keep
            }
        })
    }

    /// Collapses internal node `node` (whose children are leaves) into a leaf
    /// carrying the mean of its children's values.
    pub fn prune(&self, node: usize) -> Tree {
        let (l, r) = self.children(node).expect("prune needs an internal node");
        let value = 0.5 * (self.leaf_value(l) + self.leaf_value(r));
        self.rebuild(|id, _| if id == node { Rebuild::Collapse(value) } else { Rebuild::Keep })
    }

    /// Same structure with the split rule of `node` replaced.
    pub fn with_rule(&self, node: usize, rule: SplitRule) -> Tree {
        let mut t = self.clone();
        if let NodeKind::Split { rule: r, .. } = &mut t.nodes[node].kind {
            *r = rule;
        } else {
            panic!("node {node} is not internal");
        }
        t
    }

    fn rebuild(&self, mut action: impl FnMut(usize, &Node) -> Rebuild) -> Tree {
        let mut out = Vec::with_capacity(self.nodes.len() + 2);
        self.rebuild_from(0, None, 0, &mut action, &mut out);
        Tree { nodes: out }
    }

    fn rebuild_from(
        &self,
        id: usize,
        parent: Option<usize>,
        depth: usize,
        action: &mut impl FnMut(usize, &Node) -> Rebuild,
        out: &mut Vec<Node>,
    ) -> usize {
        let me = out.len();
        let node = &self.nodes[id];
        match (action(id, node), &node.kind) {
            (Rebuild::Collapse(value), _) => {
                out.push(Node { kind: NodeKind::Leaf { value }, parent, depth });
            }
            (Rebuild::Split(rule, value), _) => {
                out.push(Node {
                    kind: NodeKind::Split { rule, left: me + 1, right: me + 2 },
                    parent,
                    depth,
                });
                let leaf = |_| Node {
                    kind: NodeKind::Leaf { value },
                    parent: Some(me),
                    depth: depth + 1,
                };
                out.push(leaf(0));
                out.push(leaf(1));
            }
            (Rebuild::Keep, NodeKind::Leaf { value }) => {
                out.push(Node { kind: NodeKind::Leaf { value: *value }, parent, depth });
            }
            (Rebuild::Keep, NodeKind::Split { rule, left, right }) => {
                out.push(Node {
                    kind: NodeKind::Split { rule: *rule, left: 0, right: 0 },
                    parent,
                    depth,
                });
                let (left, right, rule) = (*left, *right, *rule);
                let l = self.rebuild_from(left, Some(me), depth + 1, action, out);
                let r = self.rebuild_from(right, Some(me), depth + 1, action, out);
                out[me].kind = NodeKind::Split { rule, left: l, right: r };
            }
        }
        me
    }

    /// Open cut-index bounds `(lo, hi)` per predictor implied by the
    /// ancestors of `id`: usable cuts are `lo+1 ..= hi-1`.
    fn cut_bounds(&self, id: usize, grid: &CutGrid) -> Vec<(isize, isize)> {
        let mut bounds: Vec<(isize, isize)> =
            (0..grid.n_vars()).map(|v| (-1, grid.n_cuts(v) as isize)).collect();
        let mut child = id;
        while let Some(p) = self.nodes[child].parent {
            if let NodeKind::Split { rule, left, .. } = self.nodes[p].kind {
                let b = &mut bounds[rule.var];
                let c = rule.cut as isize;
                if child == left {
                    b.1 = b.1.min(c);
                } else {
                    b.0 = b.0.max(c);
                }
            }
            child = p;
        }
        bounds
    }

    /// Split rules a node may use given its ancestors, grouped by predictor.
    pub fn available_rules(&self, id: usize, grid: &CutGrid) -> AvailableRules {
        AvailableRules {
            bounds: self.cut_bounds(id, grid),
        }
    }

    /// Log prior of the structure and split rules (leaf means excluded).
    ///
    /// Internal node at depth d: `log p_split(d) + log p_rule`; leaf:
    /// `log(1 - p_split(d))`, or 0 when no rule is available at the leaf.
    /// Rules unavailable at their node give `-∞`.
    pub fn log_prior(&self, prior: &TreePrior, grid: &CutGrid) -> f64 {
        let mut bounds: Vec<(isize, isize)> =
            (0..grid.n_vars()).map(|v| (-1, grid.n_cuts(v) as isize)).collect();
        self.log_prior_from(0, prior, &mut bounds)
    }

    fn log_prior_from(&self, id: usize, prior: &TreePrior, bounds: &mut [(isize, isize)]) -> f64 {
        let node = &self.nodes[id];
        let avail = AvailableRules::count_vars(bounds);
        match node.kind {
            NodeKind::Leaf { .. } => {
                if avail == 0 {
                    0.0
                } else {
                    (1.0 - prior.split_prob(node.depth)).ln()
                }
            }
            NodeKind::Split { rule, left, right } => {
                let (lo, hi) = bounds[rule.var];
                let c = rule.cut as isize;
                if c <= lo || c >= hi {
                    return f64::NEG_INFINITY;
                }
                let here = prior.split_prob(node.depth).ln()
                    - (avail as f64).ln()
                    - ((hi - lo - 1) as f64).ln();
                bounds[rule.var].1 = c;
                let l = self.log_prior_from(left, prior, bounds);
                bounds[rule.var] = (c, hi);
                let r = self.log_prior_from(right, prior, bounds);
                bounds[rule.var] = (lo, hi);
                here + l + r
            }
        }
    }

    /// Serializes in depth-first preorder with cutpoint values.
    pub fn to_records(&self, grid: &CutGrid) -> Vec<NodeRecord> {
        // nodes are stored in preorder already
        self.nodes
            .iter()
            .map(|n| match n.kind {
                NodeKind::Leaf { value } => NodeRecord::Leaf { value },
                NodeKind::Split { rule, .. } => NodeRecord::Split {
                    var: rule.var,
                    cut: grid.value(rule.var, rule.cut),
                },
            })
            .collect()
    }

    pub fn from_records(records: &[NodeRecord], grid: &CutGrid) -> Result<Tree> {
        let mut nodes = Vec::with_capacity(records.len());
        let mut pos = 0;
        parse_records(records, grid, &mut pos, None, 0, &mut nodes)?;
        if pos != records.len() {
            return Err(Error::InvalidData("trailing node records after a complete tree".into()));
        }
        Ok(Tree { nodes })
    }
}

enum Rebuild {
    Keep,
    Split(SplitRule, f64),
    Collapse(f64),
}

fn parse_records(
    records: &[NodeRecord],
    grid: &CutGrid,
    pos: &mut usize,
    parent: Option<usize>,
    depth: usize,
    out: &mut Vec<Node>,
) -> Result<usize> {
    let rec = records
        .get(*pos)
        .ok_or_else(|| Error::InvalidData("truncated tree records".into()))?;
    *pos += 1;
    let me = out.len();
    match *rec {
        NodeRecord::Leaf { value } => {
            out.push(Node { kind: NodeKind::Leaf { value }, parent, depth });
        }
        NodeRecord::Split { var, cut } => {
            let cut = grid.index_of(var, cut).ok_or_else(|| {
                Error::InvalidData(format!("cutpoint {cut} of predictor {var} is not on the grid"))
            })?;
            let rule = SplitRule { var, cut };
            out.push(Node { kind: NodeKind::Split { rule, left: 0, right: 0 }, parent, depth });
            let l = parse_records(records, grid, pos, Some(me), depth + 1, out)?;
            let r = parse_records(records, grid, pos, Some(me), depth + 1, out)?;
            out[me].kind = NodeKind::Split { rule, left: l, right: r };
        }
    }
    Ok(me)
}

/// Rules usable at one node.
#[derive(Debug, Clone)]
pub struct AvailableRules {
    bounds: Vec<(isize, isize)>,
}

impl AvailableRules {
    fn count_vars(bounds: &[(isize, isize)]) -> usize {
        bounds.iter().filter(|(lo, hi)| hi - lo > 1).count()
    }

    pub fn n_vars(&self) -> usize {
        Self::count_vars(&self.bounds)
    }

    pub fn is_empty(&self) -> bool {
        self.n_vars() == 0
    }

    pub fn n_cuts(&self, var: usize) -> usize {
        let (lo, hi) = self.bounds[var];
        (hi - lo - 1).max(0) as usize
    }

    pub fn contains(&self, rule: SplitRule) -> bool {
        let (lo, hi) = self.bounds[rule.var];
        (rule.cut as isize) > lo && (rule.cut as isize) < hi
    }

    /// Log probability of `rule` under the uniform rule prior: uniform over
    /// usable predictors, then uniform over that predictor's usable cuts.
    pub fn log_prob(&self, rule: SplitRule) -> f64 {
        if !self.contains(rule) {
            return f64::NEG_INFINITY;
        }
        -(self.n_vars() as f64).ln() - (self.n_cuts(rule.var) as f64).ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<SplitRule> {
        let n = self.n_vars();
        if n == 0 {
            return None;
        }
        let pick = rng.random_range(0..n);
        let var = self
            .bounds
            .iter()
            .enumerate()
            .filter(|(_, (lo, hi))| hi - lo > 1)
            .nth(pick)
            .map(|(v, _)| v)?;
        let (lo, _) = self.bounds[var];
        let cut = (lo + 1) as usize + rng.random_range(0..self.n_cuts(var));
        Some(SplitRule { var, cut })
    }
}

/// Probabilities of the four structure moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        Self { grow: 0.25, prune: 0.25, change: 0.4, swap: 0.1 }
    }
}

impl MoveProbs {
    pub fn prob(&self, kind: MoveKind) -> f64 {
        match kind {
            MoveKind::Grow => self.grow,
            MoveKind::Prune => self.prune,
            MoveKind::Change => self.change,
            MoveKind::Swap => self.swap,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let u: f64 = rng.random::<f64>() * (self.grow + self.prune + self.change + self.swap);
        if u < self.grow {
            MoveKind::Grow
        } else if u < self.grow + self.prune {
            MoveKind::Prune
        } else if u < self.grow + self.prune + self.change {
            MoveKind::Change
        } else {
            MoveKind::Swap
        }
    }
}

/// Regularization prior on trees plus move probabilities and leaf prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreePrior {
    /// α_T in `α_T (1 + depth)^(-β_T)`.
    pub split_base: f64,
    /// β_T.
    pub split_power: f64,
    pub moves: MoveProbs,
    /// Prior standard deviation of each leaf mean.
    pub leaf_sd: f64,
    pub cutpoint_grid_size: usize,
}

impl TreePrior {
    /// Default leaf scale: `3 / (k √m)` with `k = 2`.
    pub fn default_leaf_sd(num_trees: usize) -> f64 {
        3.0 / (2.0 * (num_trees as f64).sqrt())
    }

    pub fn for_num_trees(num_trees: usize) -> Self {
        Self {
            split_base: 0.95,
            split_power: 2.0,
            moves: MoveProbs::default(),
            leaf_sd: Self::default_leaf_sd(num_trees),
            cutpoint_grid_size: 100,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.split_base > 0.0 && self.split_base < 1.0) {
            return Err(Error::param("split_base must lie in (0, 1)"));
        }
        if !(self.split_power > 0.0) {
            return Err(Error::param("split_power must be positive"));
        }
        let m = self.moves;
        if [m.grow, m.prune, m.change, m.swap].iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::param("move probabilities must be non-negative"));
        }
        if ((m.grow + m.prune + m.change + m.swap) - 1.0).abs() > 1e-9 {
            return Err(Error::param("move probabilities must sum to 1"));
        }
        if !(self.leaf_sd > 0.0) {
            return Err(Error::param("leaf_sd must be positive"));
        }
        if self.cutpoint_grid_size == 0 {
            return Err(Error::param("cutpoint_grid_size must be positive"));
        }
        Ok(())
    }

    /// Prior probability that a node at `depth` splits.
    pub fn split_prob(&self, depth: usize) -> f64 {
        node_split_prior(depth, self)
    }
}

/// `α_T (1 + depth)^(-β_T)`.
pub fn node_split_prior(depth: usize, prior: &TreePrior) -> f64 {
    prior.split_base * (1.0 + depth as f64).powf(-prior.split_power)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

/// A candidate structure one move away from the current tree.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub kind: MoveKind,
    pub candidate: Tree,
    /// `log q(candidate → current) - log q(current → candidate)`.
    pub log_proposal_ratio: f64,
}

/// Draws a candidate tree by one move of the given kind, or `None` when the
/// move is infeasible for this tree (counted as a rejection).
pub fn propose<R: Rng + ?Sized>(
    tree: &Tree,
    kind: MoveKind,
    prior: &TreePrior,
    grid: &CutGrid,
    rng: &mut R,
) -> Option<Proposal> {
    let moves = &prior.moves;
    match kind {
        MoveKind::Grow => {
            let growable: Vec<(usize, AvailableRules)> = tree
                .leaves()
                .into_iter()
                .map(|l| (l, tree.available_rules(l, grid)))
                .filter(|(_, a)| !a.is_empty())
                .collect();
            if growable.is_empty() {
                return None;
            }
            let (leaf, avail) = &growable[rng.random_range(0..growable.len())];
            let rule = avail.sample(rng)?;
            let candidate = tree.grow(*leaf, rule);
            let forward = moves.grow.ln() - (growable.len() as f64).ln() + avail.log_prob(rule);
            let backward = moves.prune.ln() - (candidate.nog_nodes().len() as f64).ln();
            Some(Proposal { kind, candidate, log_proposal_ratio: backward - forward })
        }
        MoveKind::Prune => {
            let nog = tree.nog_nodes();
            if nog.is_empty() {
                return None;
            }
            let node = nog[rng.random_range(0..nog.len())];
            let rule = tree.rule(node).expect("nog node is internal");
            let avail = tree.available_rules(node, grid);
            let candidate = tree.prune(node);
            let n_growable = candidate
                .leaves()
                .into_iter()
                .filter(|&l| !candidate.available_rules(l, grid).is_empty())
                .count();
            let forward = moves.prune.ln() - (nog.len() as f64).ln();
            let backward = moves.grow.ln() - (n_growable as f64).ln() + avail.log_prob(rule);
            Some(Proposal { kind, candidate, log_proposal_ratio: backward - forward })
        }
        MoveKind::Change => {
            let internal = tree.internal_nodes();
            if internal.is_empty() {
                return None;
            }
            let node = internal[rng.random_range(0..internal.len())];
            let avail = tree.available_rules(node, grid);
            let old = tree.rule(node).expect("internal node");
            let new = avail.sample(rng)?;
            let candidate = tree.with_rule(node, new);
            // ancestors are untouched, so both directions draw from the same rule set
            let ratio = avail.log_prob(old) - avail.log_prob(new);
            Some(Proposal { kind, candidate, log_proposal_ratio: ratio })
        }
        MoveKind::Swap => {
            let pairs = swap_pairs(tree);
            if pairs.is_empty() {
                return None;
            }
            let (parent, child) = pairs[rng.random_range(0..pairs.len())];
            Some(Proposal {
                kind,
                candidate: swap_rules(tree, parent, child),
                log_proposal_ratio: 0.0,
            })
        }
    }
}

/// (parent, child) pairs where both nodes are internal.
pub fn swap_pairs(tree: &Tree) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for p in tree.internal_nodes() {
        let (l, r) = tree.children(p).expect("internal");
        for c in [l, r] {
            if !tree.is_leaf(c) {
                pairs.push((p, c));
            }
        }
    }
    pairs
}

/// Exchanges the rules of `parent` and `child`. When the sibling of `child`
/// is internal with the same rule as `child`, it receives the parent's rule too.
pub fn swap_rules(tree: &Tree, parent: usize, child: usize) -> Tree {
    let (l, r) = tree.children(parent).expect("parent is internal");
    let sibling = if l == child { r } else { l };
    let parent_rule = tree.rule(parent).expect("parent is internal");
    let child_rule = tree.rule(child).expect("child is internal");
    let mut t = tree.with_rule(parent, child_rule).with_rule(child, parent_rule);
    if tree.rule(sibling) == Some(child_rule) {
        t = t.with_rule(sibling, parent_rule);
    }
    t
}

/// Observation count and residual sum of one leaf.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafStat {
    pub n: usize,
    pub sum: f64,
}

/// Per-node sufficient statistics for an assignment of rows to leaves.
pub fn leaf_stats(n_nodes: usize, assign: &[u32], residuals: &[f64], out: &mut Vec<LeafStat>) {
    out.clear();
    out.resize(n_nodes, LeafStat::default());
    for (&a, &r) in assign.iter().zip(residuals) {
        let s = &mut out[a as usize];
        s.n += 1;
        s.sum += r;
    }
}

/// Leaf-dependent part of the log marginal likelihood of the residuals,
/// leaf means integrated against `N(0, leaf_sd²)`. Terms common to every
/// tree over the same rows are dropped.
pub fn log_integrated_likelihood(tree: &Tree, stats: &[LeafStat], noise_var: f64, leaf_sd: f64) -> f64 {
    let leaf_var = leaf_sd * leaf_sd;
    tree.leaves()
        .into_iter()
        .map(|l| {
            let LeafStat { n, sum } = stats[l];
            let denom = noise_var + n as f64 * leaf_var;
            0.5 * (noise_var / denom).ln() + leaf_var * sum * sum / (2.0 * noise_var * denom)
        })
        .sum()
}

/// Posterior mean and variance of one leaf mean.
pub fn leaf_posterior(stat: LeafStat, noise_var: f64, leaf_sd: f64) -> (f64, f64) {
    let var = 1.0 / (stat.n as f64 / noise_var + 1.0 / (leaf_sd * leaf_sd));
    (var * stat.sum / noise_var, var)
}

/// Routes every row through `tree`, writing leaf ids.
pub fn assign_rows(tree: &Tree, bins: &BinnedCovariates, out: &mut Vec<u32>) {
    out.clear();
    out.extend((0..bins.n_rows()).map(|i| tree.route_binned(bins.row(i)) as u32));
}

/// Reusable buffers for tree updates.
#[derive(Debug, Default)]
pub struct Scratch {
    cand_assign: Vec<u32>,
    cur_stats: Vec<LeafStat>,
    cand_stats: Vec<LeafStat>,
}

/// Log Metropolis-Hastings ratio of moving from `tree` to the proposal.
/// `-∞` when the candidate has an unusable rule or an empty leaf.
pub fn log_acceptance_ratio(
    tree: &Tree,
    assign: &[u32],
    proposal: &Proposal,
    bins: &BinnedCovariates,
    residuals: &[f64],
    noise_var: f64,
    prior: &TreePrior,
    grid: &CutGrid,
    scratch: &mut Scratch,
) -> f64 {
    let cand = &proposal.candidate;
    let prior_cand = cand.log_prior(prior, grid);
    if prior_cand == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    assign_rows(cand, bins, &mut scratch.cand_assign);
    leaf_stats(cand.n_nodes(), &scratch.cand_assign, residuals, &mut scratch.cand_stats);
    if cand.leaves().iter().any(|&l| scratch.cand_stats[l].n == 0) {
        return f64::NEG_INFINITY;
    }
    leaf_stats(tree.n_nodes(), assign, residuals, &mut scratch.cur_stats);
    let lik_cand = log_integrated_likelihood(cand, &scratch.cand_stats, noise_var, prior.leaf_sd);
    let lik_cur = log_integrated_likelihood(tree, &scratch.cur_stats, noise_var, prior.leaf_sd);
    (prior_cand - tree.log_prior(prior, grid)) + (lik_cand - lik_cur) + proposal.log_proposal_ratio
}

/// Outcome of one structure update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveOutcome {
    pub kind: MoveKind,
    pub proposed: bool,
    pub accepted: bool,
}

/// One Metropolis-Hastings structure move on `tree`; `assign` must hold the
/// current leaf of every row and is kept in sync.
pub fn mh_step<R: Rng + ?Sized>(
    tree: &mut Tree,
    assign: &mut Vec<u32>,
    bins: &BinnedCovariates,
    residuals: &[f64],
    noise_var: f64,
    prior: &TreePrior,
    grid: &CutGrid,
    scratch: &mut Scratch,
    rng: &mut R,
) -> MoveOutcome {
    let kind = prior.moves.sample(rng);
    let Some(proposal) = propose(tree, kind, prior, grid, rng) else {
        return MoveOutcome { kind, proposed: false, accepted: false };
    };
    let log_ratio =
        log_acceptance_ratio(tree, assign, &proposal, bins, residuals, noise_var, prior, grid, scratch);
    let u: f64 = rng.random();
    let accepted = log_ratio > f64::NEG_INFINITY && u.ln() < log_ratio;
    if accepted {
        *tree = proposal.candidate;
        std::mem::swap(assign, &mut scratch.cand_assign);
    }
    MoveOutcome { kind, proposed: true, accepted }
}

/// Draws every leaf mean from its conjugate posterior given the residuals of
/// the rows assigned to it.
pub fn leaf_conjugate_update<R: Rng + ?Sized>(
    tree: &mut Tree,
    assign: &[u32],
    residuals: &[f64],
    noise_var: f64,
    leaf_sd: f64,
    scratch: &mut Scratch,
    rng: &mut R,
) -> Result<()> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::param(format!("noise variance must be positive, got {noise_var}")));
    }
    if !(leaf_sd > 0.0) {
        return Err(Error::param("leaf_sd must be positive"));
    }
    leaf_stats(tree.n_nodes(), assign, residuals, &mut scratch.cur_stats);
    for leaf in tree.leaves() {
        let stat = scratch.cur_stats[leaf];
        if stat.n == 0 {
            return Err(Error::InvalidData(format!("leaf {leaf} has no observations")));
        }
        let (mean, var) = leaf_posterior(stat, noise_var, leaf_sd);
        let z: f64 = rng.sample(StandardNormal);
        tree.set_leaf_value(leaf, mean + var.sqrt() * z);
    }
    Ok(())
}

/// The trees of one latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub latent_dim: usize,
}

impl Forest {
    pub fn stumps(num_trees: usize, latent_dim: usize) -> Self {
        Self { trees: vec![Tree::stump(0.0); num_trees], latent_dim }
    }

    /// Sum of tree outputs for a raw covariate row.
    pub fn predict_row(&self, x: &[f64], grid: &CutGrid) -> f64 {
        self.trees.iter().map(|t| t.predict(x, grid)).sum()
    }

    pub fn mean_depth(&self) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.depth() as f64).sum::<f64>() / self.trees.len() as f64
    }
}

/// Fitted values `G(X) = Σ_k g(X; θ_k)` for every row of `x`.
pub fn fitted(forest: &Forest, x: &Covariates, grid: &CutGrid) -> Result<Vec<f64>> {
    if x.n_cols() != grid.n_vars() {
        return Err(Error::InvalidData(format!(
            "{} covariates but the model was fit on {}",
            x.n_cols(),
            grid.n_vars()
        )));
    }
    Ok((0..x.n_rows()).map(|i| forest.predict_row(x.row(i), grid)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    fn toy_x() -> Covariates {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, ((i * 7) % 10) as f64]).collect();
        Covariates::from_rows(vec!["a".into(), "b".into()], &rows).unwrap()
    }

    #[test]
    fn split_prior_values() {
        let p = TreePrior::for_num_trees(100);
        assert_eq!(node_split_prior(0, &p), 0.95);
        assert!((node_split_prior(2, &p) - 0.95 / 9.0).abs() < 1e-15);
        let stumps_only = TreePrior { split_power: f64::INFINITY, ..p };
        assert_eq!(node_split_prior(0, &stumps_only), 0.95);
        assert_eq!(node_split_prior(1, &stumps_only), 0.0);
    }

    #[test]
    fn grid_midpoints_for_few_values() {
        let x = Covariates::new(vec!["b".into()], vec![0.0, 1.0, 1.0, 0.0, 3.0]).unwrap();
        let g = CutGrid::from_covariates(&x, 100);
        assert_eq!(g.cuts(0), &[0.5, 2.0]);
        assert_eq!(g.bin(0, 0.0), 0);
        assert_eq!(g.bin(0, 0.5), 1);
        assert_eq!(g.bin(0, 3.0), 2);
    }

    #[test]
    fn grid_quantiles_are_increasing_and_bounded() {
        let vals: Vec<f64> = (0..1000).map(|i| (i as f64).powi(3)).collect();
        let x = Covariates::new(vec!["v".into()], vals).unwrap();
        let g = CutGrid::from_covariates(&x, 100);
        assert_eq!(g.n_cuts(0), 100);
        assert!(g.cuts(0).windows(2).all(|w| w[0] < w[1]));
        assert!(g.cuts(0)[0] > 0.0 && *g.cuts(0).last().unwrap() < 999f64.powi(3));
    }

    #[test]
    fn grow_then_prune_restores_stump() {
        let t = Tree::stump(0.0);
        let g = t.grow(0, SplitRule { var: 0, cut: 3 });
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_leaves(), 2);
        assert_eq!(g.internal_nodes(), vec![0]);
        assert_eq!(g.prune(0), t);
    }

    #[test]
    fn grow_prune_nested_restores_structure() {
        let t = Tree::stump(1.5)
            .grow(0, SplitRule { var: 0, cut: 4 })
            .grow(2, SplitRule { var: 1, cut: 2 });
        let deeper = t.grow(1, SplitRule { var: 0, cut: 1 });
        let back = deeper.prune(1);
        assert_eq!(back, t);
        assert_eq!(deeper.depth(), 2);
    }

    #[test]
    fn routing_binned_matches_raw() {
        let x = toy_x();
        let grid = CutGrid::from_covariates(&x, 100);
        let bins = BinnedCovariates::new(&x, &grid).unwrap();
        let t = Tree::stump(0.0)
            .grow(0, SplitRule { var: 0, cut: 4 })
            .grow(2, SplitRule { var: 1, cut: 2 });
        for i in 0..x.n_rows() {
            assert_eq!(t.route_binned(bins.row(i)), t.route(x.row(i), &grid));
        }
    }

    #[test]
    fn available_rules_respect_ancestors() {
        let x = toy_x();
        let grid = CutGrid::from_covariates(&x, 100);
        let t = Tree::stump(0.0).grow(0, SplitRule { var: 0, cut: 4 });
        let left = t.available_rules(1, &grid);
        let right = t.available_rules(2, &grid);
        assert_eq!(left.n_cuts(0), 4);
        assert_eq!(right.n_cuts(0), grid.n_cuts(0) - 5);
        assert_eq!(left.n_cuts(1), grid.n_cuts(1));
    }

    #[test]
    fn records_round_trip() {
        let x = toy_x();
        let grid = CutGrid::from_covariates(&x, 100);
        let mut t = Tree::stump(0.0)
            .grow(0, SplitRule { var: 0, cut: 4 })
            .grow(1, SplitRule { var: 1, cut: 2 });
        for (k, l) in t.leaves().into_iter().enumerate() {
            t.set_leaf_value(l, k as f64 - 0.25);
        }
        let rec = t.to_records(&grid);
        assert_eq!(Tree::from_records(&rec, &grid).unwrap(), t);
        assert!(Tree::from_records(&rec[..2], &grid).is_err());
    }

    #[test]
    fn leaf_update_flat_prior_limit() {
        let x = Covariates::new(vec!["a".into()], vec![0.0, 1.0, 2.0]).unwrap();
        let grid = CutGrid::from_covariates(&x, 10);
        let bins = BinnedCovariates::new(&x, &grid).unwrap();
        let tree = Tree::stump(0.0);
        let mut assign = Vec::new();
        assign_rows(&tree, &bins, &mut assign);
        let (m, v) = leaf_posterior(LeafStat { n: 3, sum: 6.0 }, 1.0, f64::INFINITY);
        assert_eq!((m, v), (2.0, 1.0 / 3.0));
        let mut rng = seeded_rng(5);
        let mut scratch = Scratch::default();
        let mut t = tree;
        let draws: Vec<f64> = (0..20_000)
            .map(|_| {
                leaf_conjugate_update(&mut t, &assign, &[1.0, 2.0, 3.0], 1.0, 1e12, &mut scratch, &mut rng).unwrap();
                t.leaf_value(0)
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        assert!((mean - 2.0).abs() < 0.02);
    }

    #[test]
    fn leaf_update_two_leaves_closed_form() {
        // conjugacy oracle: precision n/τ² + 1/σ², mean = var · Σr/τ²
        let (tau2, sd) = (0.7, 0.4);
        let (m1, v1) = leaf_posterior(LeafStat { n: 3, sum: 1.2 }, tau2, sd);
        let expect_v1 = 1.0 / (3.0 / 0.7 + 1.0 / 0.16);
        assert!((v1 - expect_v1).abs() < 1e-12);
        assert!((m1 - expect_v1 * 1.2 / 0.7).abs() < 1e-12);
        let (m2, v2) = leaf_posterior(LeafStat { n: 7, sum: -2.1 }, tau2, sd);
        let expect_v2 = 1.0 / (7.0 / 0.7 + 1.0 / 0.16);
        assert!((v2 - expect_v2).abs() < 1e-12);
        assert!((m2 - expect_v2 * -2.1 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn leaf_update_rejects_bad_noise() {
        let mut t = Tree::stump(0.0);
        let mut rng = seeded_rng(1);
        let mut scratch = Scratch::default();
        assert!(leaf_conjugate_update(&mut t, &[0], &[1.0], 0.0, 1.0, &mut scratch, &mut rng).is_err());
    }

    #[test]
    fn fitted_examples() {
        let x = Covariates::new(vec!["u".into()], vec![0.1, 0.3, 0.6, 0.9]).unwrap();
        let grid = CutGrid::from_cuts(vec![vec![0.5]]).unwrap();
        let stumps = Forest::stumps(3, 0);
        assert_eq!(fitted(&stumps, &x, &grid).unwrap(), vec![0.0; 4]);
        let mut step = Tree::stump(0.0).grow(0, SplitRule { var: 0, cut: 0 });
        step.set_leaf_value(1, -1.0);
        step.set_leaf_value(2, 1.0);
        let one = Forest { trees: vec![step.clone()], latent_dim: 0 };
        assert_eq!(fitted(&one, &x, &grid).unwrap(), vec![-1.0, -1.0, 1.0, 1.0]);
        let mut other = Tree::stump(0.25);
        other.set_leaf_value(0, 0.25);
        let two = Forest { trees: vec![step.clone(), other.clone()], latent_dim: 0 };
        let swapped = Forest { trees: vec![other, step], latent_dim: 0 };
        let f2 = fitted(&two, &x, &grid).unwrap();
        assert_eq!(f2, vec![-0.75, -0.75, 1.25, 1.25]);
        assert_eq!(f2, fitted(&swapped, &x, &grid).unwrap());
    }

    #[test]
    fn infeasible_moves_are_skipped() {
        let x = toy_x();
        let grid = CutGrid::from_covariates(&x, 100);
        let prior = TreePrior::for_num_trees(1);
        let mut rng = seeded_rng(0);
        let stump = Tree::stump(0.0);
        assert!(propose(&stump, MoveKind::Prune, &prior, &grid, &mut rng).is_none());
        assert!(propose(&stump, MoveKind::Change, &prior, &grid, &mut rng).is_none());
        assert!(propose(&stump, MoveKind::Swap, &prior, &grid, &mut rng).is_none());
        let g = propose(&stump, MoveKind::Grow, &prior, &grid, &mut rng).unwrap();
        assert_eq!(g.candidate.n_leaves(), 2);
    }

    #[test]
    fn swap_is_an_involution() {
        let t = Tree::stump(0.0)
            .grow(0, SplitRule { var: 0, cut: 4 })
            .grow(1, SplitRule { var: 1, cut: 2 })
            .grow(4, SplitRule { var: 1, cut: 2 });
        assert_eq!(swap_pairs(&t).len(), 2);
        for (p, c) in swap_pairs(&t) {
            let s = swap_rules(&t, p, c);
            assert_eq!(swap_rules(&s, p, c), t);
        }
    }
}
