mod commands;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "cen",
    version,
    about = "Temporal knowledge graph reasoning over snapshot histories"
)]
pub struct Cli {
    /// Seed for every random choice; overrides any `seed` in a config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Run single-threaded; results then depend only on inputs, settings and seed.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load a quadruple dataset directory and print its statistics.
    Prepare(PrepareArgs),
    /// Generate a synthetic dataset with planted lagged patterns.
    Synth(SynthArgs),
    /// Train a model with the length curriculum.
    Train(TrainArgs),
    /// Rank a split with a trained checkpoint.
    Eval(EvalArgs),
    /// Fine-tune a checkpoint timestamp by timestamp and report test metrics.
    Online(OnlineArgs),
    /// Compare analytic and finite-difference gradients on random toy models.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate the full model and its ablations.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    /// Directory with train.txt, valid.txt, test.txt and optional stat.txt.
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// `key = value` generator settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// `key = value` training settings; `data = <dir>` names the dataset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (overrides the config).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the checkpoint, logs and manifest.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub no_curriculum: bool,
    #[arg(long)]
    pub single_channel: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory (defaults to the one recorded at training time).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: String,
    /// `raw` or `time-filtered`.
    #[arg(long, default_value = "time-filtered")]
    pub mode: String,
    /// Count score ties against the target.
    #[arg(long)]
    pub pessimistic_ties: bool,
    /// CSV destination (defaults next to the checkpoint).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OnlineArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// `key = value` online settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Disable the parameter tie to the previous timestamp.
    #[arg(long)]
    pub no_tr: bool,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Output directory (defaults to the checkpoint's directory).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Number of random instances.
    #[arg(long, default_value_t = 5)]
    pub instances: usize,
    /// Activation used throughout the toy models.
    #[arg(long, default_value = "tanh")]
    pub activation: String,
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Training and online settings shared by every variant.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of seeds, starting from `--seed` (default 0).
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// CSV destination.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
