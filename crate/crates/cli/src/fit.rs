use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use mpbart::diagnostics::{self, ChainSummary, Histogram};
use mpbart::sampler::{run_chain_with, PosteriorDraws};
use mpbart::trees::CutGrid;
use mpbart::{seeded_rng, AlgorithmRegistry, Dataset, LabelMap};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunArgs, RunConfig};
use crate::model::{DrawRecord, Header, ModelWriter, FORMAT};
use crate::table::{Encoded, RawTable};
use crate::Invalid;

/// Prior draws behind each prior histogram.
const PRIOR_HIST_DRAWS: usize = 20_000;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training CSV; first column is the outcome.
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the model file and traces.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

/// Labels with the configured reference, defaulting to the last level.
pub fn label_map(levels: &[String], reference: Option<&str>) -> Result<LabelMap> {
    let reference = reference.unwrap_or_else(|| levels.last().unwrap());
    LabelMap::new(levels.to_vec(), reference).map_err(|e| Invalid(e.to_string()).into())
}

fn suffix(chains: usize, chain: usize) -> String {
    if chains == 1 {
        String::new()
    } else {
        format!("_chain{}", chain + 1)
    }
}

/// Chain `k` uses stream `k` of the seed's generator.
pub fn chain_rng(seed: u64, stream: u64) -> mpbart::ChainRng {
    let mut rng = seeded_rng(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Serialize)]
struct FitSummary<'a> {
    config: &'a RunConfig,
    reference_level: &'a str,
    chains: Vec<ChainSummary>,
}

pub fn run(args: &FitArgs) -> Result<()> {
    let cfg = args.run.resolve()?;
    let table = RawTable::read(&args.data)?;
    let enc = Encoded::from_table(&table, &cfg.categorical, cfg.missing_indicators)?;
    let labels = label_map(&enc.schema.outcome_levels, cfg.reference_level.as_deref())?;
    let data = Dataset::from_labels(&enc.outcome, enc.x.clone(), labels.clone())?;
    let prior = cfg.prior(data.latent_dim())?;
    let grid = CutGrid::from_covariates(data.x(), prior.tree_prior.cutpoint_grid_size);
    std::fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;

    let summaries = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| {
            let header = Header {
                format: FORMAT.into(),
                config: cfg.clone(),
                chain,
                labels: labels.clone(),
                schema: enc.schema.clone(),
                grid: grid.clone(),
                n_train: data.len(),
                n_draws: cfg.kept_draws(),
            };
            fit_chain(&args.out_dir, &header, &data, &prior)
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = FitSummary { config: &cfg, reference_level: labels.reference(), chains: summaries };
    let path = args.out_dir.join("summary.json");
    std::fs::write(&path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn fit_chain(dir: &Path, header: &Header, data: &Dataset, prior: &mpbart::PriorConfig) -> Result<ChainSummary> {
    let cfg = &header.config;
    let sfx = suffix(cfg.chains, header.chain);
    let algorithm = AlgorithmRegistry::with_defaults().get(&cfg.algorithm)?;
    let model_path = dir.join(format!("model{sfx}.json"));
    let mut writer = ModelWriter::create(&model_path, header)?;
    let mut io_error = None;
    let rng = chain_rng(cfg.seed, header.chain as u64);
    let started = std::time::Instant::now();
    let draws = run_chain_with(data, prior, &cfg.chain(), Arc::clone(&algorithm), rng, &mut |view| {
        if io_error.is_none() {
            if let Err(e) = writer.push(&DrawRecord::from_view(view, &header.grid)) {
                io_error = Some(e);
            }
        }
        Ok(())
    })?;
    if let Some(e) = io_error {
        return Err(e);
    }
    let written = writer.finish()?;
    log::info!(
        "chain {}: {} sweeps, {written} draws to {} in {:.1}s",
        header.chain + 1,
        draws.trace.len(),
        model_path.display(),
        started.elapsed().as_secs_f64()
    );
    if draws.grid != header.grid {
        anyhow::bail!("internal error: sampler grid differs from the stored grid");
    }
    write_traces(dir, &sfx, &draws)?;
    let mut prior_rng = chain_rng(cfg.seed ^ 0x5eed_9e1a, header.chain as u64);
    write_histograms(dir, &sfx, &draws, prior, &mut prior_rng)?;
    Ok(diagnostics::summarize(&draws)?)
}

fn upper_entries(c: usize) -> Vec<(usize, usize)> {
    (0..c).flat_map(|i| (i..c).map(move |j| (i, j))).collect()
}

fn write_traces(dir: &Path, sfx: &str, draws: &PosteriorDraws) -> Result<()> {
    let c = draws.labels.latent_dim();
    let depth = diagnostics::avg_tree_depth_trace(draws);
    let mut w = csv::Writer::from_path(dir.join(format!("trace_depth{sfx}.csv")))?;
    let mut head = vec!["iteration".to_string()];
    head.extend((1..=c).map(|k| format!("depth_{k}")));
    w.write_record(&head)?;
    for (it, row) in depth.iter().enumerate() {
        let mut rec = vec![(it + 1).to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;

    let entries = upper_entries(c);
    let mut w = csv::Writer::from_path(dir.join(format!("trace_sigma{sfx}.csv")))?;
    let mut head = vec!["iteration".to_string()];
    head.extend(entries.iter().map(|(i, j)| format!("sigma_{}{}", i + 1, j + 1)));
    head.extend(["mu_l1".to_string(), "alpha1_sq".to_string(), "alpha3_sq".to_string()]);
    w.write_record(&head)?;
    for (it, r) in draws.trace.iter().enumerate() {
        let mut rec = vec![(it + 1).to_string()];
        rec.extend(entries.iter().map(|&(i, j)| r.sigma[(i, j)].to_string()));
        rec.extend([r.mu_l1.to_string(), r.alpha1_sq.to_string(), r.alpha3_sq.to_string()]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Posterior (post-burn-in) and prior histograms of each covariance entry.
fn write_histograms(
    dir: &Path,
    sfx: &str,
    draws: &PosteriorDraws,
    prior: &mpbart::PriorConfig,
    rng: &mut mpbart::ChainRng,
) -> Result<()> {
    let c = draws.labels.latent_dim();
    let prior_draws = diagnostics::prior_sigma_draws(prior, PRIOR_HIST_DRAWS, rng)?;
    let mut w = csv::Writer::from_path(dir.join(format!("sigma_hist{sfx}.csv")))?;
    w.write_record(["entry", "source", "lower", "upper", "count"])?;
    for (i, j) in upper_entries(c) {
        let entry = format!("sigma_{}{}", i + 1, j + 1);
        let post = draws.sigma_series(i, j);
        let prior_series: Vec<f64> = prior_draws.iter().map(|s| s[(i, j)]).collect();
        for (source, series) in [("posterior", post), ("prior", prior_series)] {
            if series.is_empty() {
                continue;
            }
            let h = Histogram::freedman_diaconis(&series)?;
            for (k, count) in h.counts.iter().enumerate() {
                w.write_record([
                    entry.clone(),
                    source.to_string(),
                    h.edges[k].to_string(),
                    h.edges[k + 1].to_string(),
                    count.to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
