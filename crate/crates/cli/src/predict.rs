use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use mpbart::predict::{accuracy_agreement, accuracy_mode, PredictiveDraws, Predictor};
use mpbart::seeded_rng;

use crate::model::Model;
use crate::table::RawTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// One column per posterior draw.
    Draws,
    /// Modal class and per-class frequencies.
    Summary,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// CSV with the model's covariate columns; an outcome column is optional.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value = "summary")]
    pub mode: Mode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &PredictArgs) -> Result<()> {
    let model = Model::load(&args.model)?;
    let h = &model.header;
    let table = RawTable::read(&args.data)?;
    let x = h.schema.encode(&table)?;
    let mut rng = seeded_rng(args.seed);
    let mut predictor = Predictor::new(&x, &h.grid, &h.labels)?;
    for d in &model.draws {
        predictor.add_draw(&d.forests(&h.grid)?, d.mean_scale, &d.sigma_matrix(), &mut rng)?;
    }
    let preds = predictor.finish();

    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    match args.mode {
        Mode::Draws => write_draws(&mut w, &preds)?,
        Mode::Summary => write_summary(&mut w, &preds)?,
    }
    w.flush()?;

    if let Some(observed) = h.schema.outcomes(&table) {
        let observed = h.schema.outcome_indices(&observed)?;
        if preds.n_draws() > 0 {
            let agree = accuracy_agreement(&observed, &preds)?;
            let mode = accuracy_mode(&observed, &preds)?;
            eprintln!("agreement={agree:.4} mode_accuracy={:.4} mode_ties={}", mode.accuracy, mode.ties);
        }
    }
    Ok(())
}

fn write_draws<W: Write>(w: &mut csv::Writer<W>, preds: &PredictiveDraws) -> Result<()> {
    let levels = preds.labels().levels();
    let mut head = vec!["row".to_string()];
    head.extend((1..=preds.n_draws()).map(|j| format!("draw_{j}")));
    w.write_record(&head)?;
    for i in 0..preds.n_obs() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(preds.row(i).iter().map(|&l| levels[l as usize].clone()));
        w.write_record(&rec)?;
    }
    Ok(())
}

fn write_summary<W: Write>(w: &mut csv::Writer<W>, preds: &PredictiveDraws) -> Result<()> {
    let levels = preds.labels().levels();
    let mut head = vec!["row".to_string(), "mode".to_string(), "mode_tied".to_string()];
    head.extend(levels.iter().map(|l| format!("freq_{l}")));
    w.write_record(&head)?;
    for i in 0..preds.n_obs() {
        let (mode, tied) = preds.mode(i);
        let mut rec = vec![(i + 1).to_string(), levels[mode].clone(), tied.to_string()];
        rec.extend(preds.frequencies(i).iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    Ok(())
}
