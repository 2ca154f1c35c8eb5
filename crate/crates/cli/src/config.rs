use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Args;
use mpbart::trees::TreePrior;
use mpbart::{AlgorithmRegistry, ChainConfig, PriorConfig};
use serde::{Deserialize, Serialize};

use crate::Invalid;

/// Everything that determines a fit. Stored verbatim in the model header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub algorithm: String,
    /// Defaults to the last outcome level.
    pub reference_level: Option<String>,
    pub num_trees: usize,
    pub burn_in: usize,
    pub draws: usize,
    pub thin: usize,
    /// ν − C.
    pub dof_offset: f64,
    /// Common off-diagonal of Ψ (unit diagonal).
    pub psi_offdiag: f64,
    pub split_base: f64,
    pub split_power: f64,
    /// Leaf prior sd; `None` uses `3 / (2 √m)`.
    pub leaf_sd: Option<f64>,
    pub cutpoint_grid_size: usize,
    pub seed: u64,
    pub chains: usize,
    /// Covariate columns to one-hot encode.
    pub categorical: Vec<String>,
    /// Add a missing-indicator column and median-impute blank cells.
    pub missing_indicators: bool,
    pub check_invariants: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algorithm: "p1".into(),
            reference_level: None,
            num_trees: 100,
            burn_in: 50_000,
            draws: 30_000,
            thin: 1,
            dof_offset: 1.0,
            psi_offdiag: 0.0,
            split_base: 0.95,
            split_power: 2.0,
            leaf_sd: None,
            cutpoint_grid_size: 100,
            seed: 0,
            chains: 1,
            categorical: Vec::new(),
            missing_indicators: true,
            check_invariants: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Invalid(msg.to_string())) };
        AlgorithmRegistry::with_defaults().get(&self.algorithm).map_err(|e| Invalid(e.to_string()))?;
        check(self.num_trees >= 1, "num_trees must be at least 1")?;
        check(self.draws >= 1, "draws must be at least 1")?;
        check(self.thin >= 1, "thin must be at least 1")?;
        check(self.chains >= 1, "chains must be at least 1")?;
        check(self.dof_offset >= 1.0, "dof_offset (nu - C) must be at least 1")?;
        check(self.psi_offdiag.abs() < 1.0, "psi_offdiag must lie in (-1, 1)")?;
        check(self.cutpoint_grid_size >= 1, "cutpoint_grid_size must be at least 1")?;
        Ok(())
    }

    pub fn prior(&self, latent_dim: usize) -> Result<PriorConfig> {
        let mut prior = PriorConfig::new(latent_dim, self.num_trees).with_psi_offdiag(self.dof_offset, self.psi_offdiag);
        prior.tree_prior = TreePrior {
            split_base: self.split_base,
            split_power: self.split_power,
            leaf_sd: self.leaf_sd.unwrap_or_else(|| TreePrior::default_leaf_sd(self.num_trees)),
            cutpoint_grid_size: self.cutpoint_grid_size,
            ..prior.tree_prior
        };
        prior.validate(latent_dim).map_err(|e| Invalid(e.to_string()))?;
        Ok(prior)
    }

    pub fn chain(&self) -> ChainConfig {
        ChainConfig {
            burn_in: self.burn_in,
            draws: self.draws,
            thin: self.thin,
            store_forests: false,
            check_invariants: self.check_invariants,
        }
    }

    pub fn kept_draws(&self) -> usize {
        self.draws.div_ceil(self.thin)
    }
}

/// Run options shared by `fit` and `compare`. Flags override `--config`.
#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON file with a run configuration.
    #[arg(long)]
    pub config: Option<std::path::PathBuf>,
    /// kd, p1 or p2.
    #[arg(long)]
    pub algorithm: Option<String>,
    #[arg(long)]
    pub reference_level: Option<String>,
    #[arg(long)]
    pub num_trees: Option<usize>,
    #[arg(long)]
    pub burn_in: Option<usize>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub dof_offset: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub psi_offdiag: Option<f64>,
    #[arg(long)]
    pub split_base: Option<f64>,
    #[arg(long)]
    pub split_power: Option<f64>,
    #[arg(long)]
    pub leaf_sd: Option<f64>,
    #[arg(long)]
    pub grid_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    /// Covariate column to one-hot encode (repeatable).
    #[arg(long)]
    pub categorical: Vec<String>,
    /// Reject blank cells instead of imputing them.
    #[arg(long)]
    pub no_missing_indicators: bool,
    /// Verify sweep invariants after every sweep.
    #[arg(long)]
    pub check_invariants: bool,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident => $target:ident),*) => {
                $(if let Some(v) = self.$field.clone() { c.$target = v; })*
            };
        }
        set!(algorithm => algorithm, num_trees => num_trees, burn_in => burn_in, draws => draws,
             thin => thin, dof_offset => dof_offset, psi_offdiag => psi_offdiag,
             split_base => split_base, split_power => split_power, grid_size => cutpoint_grid_size,
             seed => seed, chains => chains);
        if self.reference_level.is_some() {
            c.reference_level = self.reference_level.clone();
        }
        if self.leaf_sd.is_some() {
            c.leaf_sd = self.leaf_sd;
        }
        c.categorical.extend(self.categorical.iter().cloned());
        if self.no_missing_indicators {
            c.missing_indicators = false;
        }
        if self.check_invariants {
            c.check_invariants = true;
        }
        c.algorithm = c.algorithm.to_ascii_lowercase();
        c.validate()?;
        Ok(c)
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match serde_json::from_str(&text) {
        Ok(c) => Ok(c),
        Err(e) => bail!(Invalid(format!("config {}: {e}", path.display()))),
    }
}
