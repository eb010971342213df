mod commands;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gas_storage::{Error, ErrorCategory};

/// Simulate a gas market with a learning storage operator.
#[derive(Parser, Debug)]
#[command(name = "gas-storage", version, about)]
struct Cli {
    /// Root directory for run outputs when `--out` is not given.
    #[arg(long, global = true, env = "GAS_STORAGE_OUTPUT_ROOT", default_value = "runs")]
    output_root: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a SAC pricing policy and write checkpoints, logs and traces.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a reference policy over test episodes.
    Evaluate(EvaluateArgs),
    /// Evaluate two checkpoints across a grid of supply shock volatilities.
    Sweep(SweepArgs),
    /// Seasonality, volatility and density of log-price differences.
    Analyze(AnalyzeArgs),
    /// Fit Fourier seasonal coefficients to a monthly log-demand series.
    FitSeasonal(FitSeasonalArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config (TOML). Omitted keys take their defaults.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `reward.theta_n=1000`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    /// Training seed (same as `--set run.seed=N`).
    #[arg(long)]
    seed: Option<u64>,
    /// Environment steps to train for (same as `--set run.training_steps=N`).
    #[arg(long)]
    steps: Option<u64>,
    /// Run directory; defaults to `<output-root>/<tag>-seed<seed>`.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Continue the interrupted run stored in this directory.
    #[arg(long, conflicts_with_all = ["config", "sets", "seed", "steps", "out"])]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Policy checkpoint (JSON) to evaluate.
    #[arg(long, required_unless_present_any = ["constant_price", "uniform"])]
    checkpoint: Option<PathBuf>,
    /// Evaluate a fixed price instead of a checkpoint.
    #[arg(long, conflicts_with_all = ["checkpoint", "uniform"])]
    constant_price: Option<f64>,
    /// Evaluate log prices drawn uniformly between the bounds.
    #[arg(long, conflicts_with = "checkpoint")]
    uniform: bool,
    /// Environment config for reference policies; checkpoints carry their own.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config value of the reference environment. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
    /// Number of test episodes.
    #[arg(long, default_value_t = 50)]
    episodes: usize,
    /// Seed from which episode seeds are derived.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Replace the supply shock volatility of the environment.
    #[arg(long)]
    sigma_s: Option<f64>,
    /// Output directory; defaults to `<output-root>/evaluate`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Checkpoint trained without the refill penalty.
    #[arg(long)]
    baseline: PathBuf,
    /// Checkpoint trained with the refill penalty.
    #[arg(long)]
    regulated: PathBuf,
    /// Grid as `start:stop:step` or a comma-separated list.
    #[arg(long, default_value = "0.04:0.07:0.01")]
    sigma_s: String,
    /// Episodes per grid point and policy.
    #[arg(long, default_value_t = 1000)]
    episodes: usize,
    /// Seed from which episode seeds are derived.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to `<output-root>/sweep`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// Episode trace CSVs written by `train` or `evaluate`, or directories of them.
    #[arg(long, num_args = 1.., required = true)]
    traces: Vec<PathBuf>,
    /// Historical monthly prices as `date,price` CSV.
    #[arg(long)]
    external: Option<PathBuf>,
    /// Output directory; defaults to `<output-root>/analysis`.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FitSeasonalArgs {
    /// CSV with a header and columns `month,value`; month 0 is January.
    #[arg(long, short)]
    input: PathBuf,
    /// Harmonics to fit, each a divisor of 12.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,6")]
    harmonics: Vec<u32>,
    /// Write the coefficients here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Runtime => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a, &cli.output_root),
        Command::Evaluate(a) => commands::evaluate(a, &cli.output_root),
        Command::Sweep(a) => commands::sweep(a, &cli.output_root),
        Command::Analyze(a) => commands::analyze(a, &cli.output_root),
        Command::FitSeasonal(a) => commands::fit_seasonal(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
