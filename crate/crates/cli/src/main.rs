//! `mpbart`: simulate data, fit multinomial probit BART, predict, compare.

mod compare;
mod config;
mod fit;
mod model;
mod predict;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mpbart::simgen::{self, Setting, SimSpec, COVARIATE_NAMES, LEVELS};

/// Bad input or configuration; exits with status 2.
#[derive(Debug)]
pub struct Invalid(pub String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Debug, Parser)]
#[command(name = "mpbart", version, about = "Multinomial probit BART")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic three-category dataset.
    Simulate(SimulateArgs),
    /// Run the sampler and write a model file plus traces.
    Fit(fit::FitArgs),
    /// Posterior predictive outcomes for new data.
    Predict(predict::PredictArgs),
    /// Accuracy table over algorithms, reference levels and priors.
    Compare(compare::CompareArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// 1 (balanced) or 2 (rare reference class).
    #[arg(long, default_value_t = 1)]
    setting: u32,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Latent correlation.
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    rho: f64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let setting = Setting::from_number(args.setting).map_err(|e| Invalid(e.to_string()))?;
    let spec = SimSpec { rho: args.rho, ..SimSpec::new(setting, args.n) };
    spec.validate().map_err(|e| Invalid(e.to_string()))?;
    let data = simgen::generate(&spec, &mut mpbart::seeded_rng(args.seed))?;
    let sink: Box<dyn std::io::Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Invalid(format!("{}: {e}", p.display())))?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut head = vec!["S"];
    head.extend(COVARIATE_NAMES);
    w.write_record(&head)?;
    for (i, level) in data.outcome_levels().into_iter().enumerate() {
        let mut rec = vec![LEVELS[level].to_string()];
        rec.extend(data.x().row(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(e) = err.downcast_ref::<mpbart::Error>() {
        return if e.is_numerical() { 3 } else { 2 };
    }
    if err.downcast_ref::<Invalid>().is_some() || err.downcast_ref::<clap::Error>().is_some() {
        return 2;
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("MPBART_THREADS") {
        match n.parse::<usize>() {
            Ok(n) => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            Err(_) => {
                eprintln!("error: MPBART_THREADS must be a non-negative integer, got '{n}'");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fit(a) => fit::run(a),
        Command::Predict(a) => predict::run(a),
        Command::Compare(a) => compare::run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
