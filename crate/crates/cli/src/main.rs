//! `snh`: sanitize a spatial dataset once, then answer unlimited range-count
//! queries from a bank of small learned models.

mod commands;
mod config;
mod dataset;
mod errors;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::FitFlags;

#[derive(Parser)]
#[command(name = "snh", version, about = "Private spatial range-count queries")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Project a lat,lon CSV into a planar dataset file.
    Ingest(IngestArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Sanitize a dataset and train the model bank.
    Fit(FitArgs),
    /// Answer a CSV of range-count queries from a fitted bundle.
    Answer(AnswerArgs),
    /// Score a bundle against exact counts on a generated workload.
    Eval(EvalArgs),
    /// Run SNH and the uniform-grid baseline across a privacy-budget grid.
    Sweep(SweepArgs),
    /// Fit the grid-width selector from a labeled sample CSV.
    ParamselectTrain(ParamselectTrainArgs),
    /// Predict a grid width from a selector model and a public surrogate.
    ParamselectPredict(ParamselectPredictArgs),
    /// Print the access audit recorded at fit time.
    Audit(AuditArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// CSV with header `lat,lon`, degrees.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    center_lat: f64,
    #[arg(long)]
    center_lon: f64,
    /// Region side in meters.
    #[arg(long)]
    side: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// uniform or gaussian-mixture.
    #[arg(long)]
    kind: String,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    side: f64,
    #[arg(long, default_value_t = 0.0)]
    center_lat: f64,
    #[arg(long, default_value_t = 0.0)]
    center_lon: f64,
    /// Mixture components (gaussian-mixture only).
    #[arg(long, default_value_t = 5)]
    components: usize,
    /// Component standard deviation in meters (gaussian-mixture only).
    #[arg(long, default_value_t = 100.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Output bundle directory.
    #[arg(long)]
    out: PathBuf,
    /// Optional public workload CSV (`cx,cy,r`) for loss weighting.
    #[arg(long)]
    workload: Option<PathBuf>,
    /// TOML config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Selector model JSON, required when rho=paramselect.
    #[arg(long)]
    paramselect_model: Option<PathBuf>,
    /// Public surrogate dataset for the entropy feature.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Args)]
struct AnswerArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Query CSV with header `cx,cy,r` (corner coordinates, meters).
    #[arg(long)]
    queries: PathBuf,
    /// Output CSV (`cx,cy,r,answer`); stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 5000)]
    count: usize,
    #[arg(long, default_value_t = 25.0)]
    l: f64,
    #[arg(long, default_value_t = 100.0)]
    u: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-query CSV output; summary JSON always goes to stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Privacy budgets; defaults to 0.05 0.1 0.2 0.4 0.8.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    epsilons: Vec<f64>,
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Evaluation workload size per (epsilon, seed) cell.
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: FitFlags,
}

#[derive(Args)]
struct ParamselectTrainArgs {
    /// Sample CSV: `n,epsilon,inv_ne,inv_sqrt_ne,entropy,rho_label`.
    #[arg(long)]
    samples: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 150)]
    n_trees: usize,
    #[arg(long, default_value_t = 7)]
    max_depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ParamselectPredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Public surrogate dataset file.
    #[arg(long)]
    surrogate: PathBuf,
    /// Sensitive dataset cardinality.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    epsilon: f64,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    bundle: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => commands::cmd_ingest(args),
        Command::Synth(args) => commands::cmd_synth(args),
        Command::Fit(args) => commands::cmd_fit(args),
        Command::Answer(args) => commands::cmd_answer(args),
        Command::Eval(args) => commands::cmd_eval(args),
        Command::Sweep(args) => commands::cmd_sweep(args),
        Command::ParamselectTrain(args) => commands::cmd_paramselect_train(args),
        Command::ParamselectPredict(args) => commands::cmd_paramselect_predict(args),
        Command::Audit(args) => commands::cmd_audit(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit as u8)
        }
    }
}
