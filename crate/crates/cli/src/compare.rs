use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use mpbart::predict::{accuracy_agreement, accuracy_mode, Predictor};
use mpbart::sampler::run_chain_with;
use mpbart::{AlgorithmRegistry, Dataset};
use rayon::prelude::*;

use crate::config::{RunArgs, RunConfig};
use crate::fit::{chain_rng, label_map};
use crate::table::{Encoded, RawTable};
use crate::Invalid;

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    /// Algorithms to run.
    #[arg(long, value_delimiter = ',', default_value = "kd,p1,p2")]
    pub algorithms: Vec<String>,
    /// Reference levels; all outcome levels when omitted.
    #[arg(long, value_delimiter = ',')]
    pub reference_levels: Vec<String>,
    /// Values of ν − C.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub dof_offsets: Vec<f64>,
    /// Values of the Ψ off-diagonal.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub psi_offdiags: Vec<f64>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

struct Row {
    cfg: RunConfig,
    reference: String,
    train: (f64, f64),
    test: (f64, f64),
    test_ties: usize,
}

pub fn run(args: &CompareArgs) -> Result<()> {
    let base = args.run.resolve()?;
    let train_table = RawTable::read(&args.train)?;
    let test_table = RawTable::read(&args.test)?;
    let enc = Encoded::from_table(&train_table, &base.categorical, base.missing_indicators)?;
    let test_x = enc.schema.encode(&test_table)?;
    let test_labels = enc
        .schema
        .outcomes(&test_table)
        .ok_or_else(|| Invalid(format!("test data has no outcome column '{}'", enc.schema.outcome)))?;
    let test_obs = enc.schema.outcome_indices(&test_labels)?;
    let train_obs = enc.schema.outcome_indices(&enc.outcome)?;

    let refs = if args.reference_levels.is_empty() {
        enc.schema.outcome_levels.clone()
    } else {
        args.reference_levels.clone()
    };
    let dofs = if args.dof_offsets.is_empty() { vec![base.dof_offset] } else { args.dof_offsets.clone() };
    let psis = if args.psi_offdiags.is_empty() { vec![base.psi_offdiag] } else { args.psi_offdiags.clone() };
    let mut grid = Vec::new();
    for alg in &args.algorithms {
        for r in &refs {
            for &dof in &dofs {
                for &psi in &psis {
                    let cfg = RunConfig {
                        algorithm: alg.to_ascii_lowercase(),
                        reference_level: Some(r.clone()),
                        dof_offset: dof,
                        psi_offdiag: psi,
                        ..base.clone()
                    };
                    cfg.validate()?;
                    grid.push(cfg);
                }
            }
        }
    }

    let rows = grid
        .into_par_iter()
        .map(|cfg| {
            let labels = label_map(&enc.schema.outcome_levels, cfg.reference_level.as_deref())?;
            let data = Dataset::from_labels(&enc.outcome, enc.x.clone(), labels.clone())?;
            let prior = cfg.prior(data.latent_dim())?;
            let algorithm = AlgorithmRegistry::with_defaults().get(&cfg.algorithm)?;
            let grid = mpbart::trees::CutGrid::from_covariates(data.x(), prior.tree_prior.cutpoint_grid_size);
            let mut on_train = Predictor::new(data.x(), &grid, &labels)?;
            let mut on_test = Predictor::new(&test_x, &grid, &labels)?;
            let mut pred_rng = chain_rng(cfg.seed, 1 << 32);
            run_chain_with(&data, &prior, &cfg.chain(), algorithm, chain_rng(cfg.seed, 0), &mut |v| {
                on_train.add_draw(v.forests, v.mean_scale, v.sigma, &mut pred_rng)?;
                on_test.add_draw(v.forests, v.mean_scale, v.sigma, &mut pred_rng)
            })?;
            let (tr, te) = (on_train.finish(), on_test.finish());
            let test_mode = accuracy_mode(&test_obs, &te)?;
            log::info!("{} ref {} done", cfg.algorithm, labels.reference());
            Ok(Row {
                reference: labels.reference().to_string(),
                train: (accuracy_agreement(&train_obs, &tr)?, accuracy_mode(&train_obs, &tr)?.accuracy),
                test: (accuracy_agreement(&test_obs, &te)?, test_mode.accuracy),
                test_ties: test_mode.ties,
                cfg,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record([
        "algorithm",
        "reference_level",
        "dof_offset",
        "psi_offdiag",
        "train_agreement",
        "train_mode_accuracy",
        "test_agreement",
        "test_mode_accuracy",
        "test_mode_ties",
    ])?;
    for r in rows {
        w.write_record([
            r.cfg.algorithm.clone(),
            r.reference,
            r.cfg.dof_offset.to_string(),
            r.cfg.psi_offdiag.to_string(),
            format!("{:.4}", r.train.0),
            format!("{:.4}", r.train.1),
            format!("{:.4}", r.test.0),
            format!("{:.4}", r.test.1),
            r.test_ties.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
