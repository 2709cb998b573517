mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Learned strategy-proof menus for school choice with a global
/// over-enrollment budget.
#[derive(Debug, Parser)]
#[command(name = "menunet", version, about)]
struct Cli {
    /// TOML experiment configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-instance parallelism.
    #[arg(long, global = true, env = "MENUNET_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample train/val/test markets.
    Generate(GenerateArgs),
    /// Train a menu network on a generated dataset.
    Train(TrainArgs),
    /// Evaluate a trained network on the test split.
    Evaluate(EvaluateArgs),
    /// Evaluate RSD or DA-with-slack on the test split.
    Baseline(BaselineArgs),
    /// Merge metric files and compare mechanisms.
    Compare(CompareArgs),
    /// Check that no sampled misreport beats truth-telling.
    Audit(AuditArgs),
    /// Time training epochs across market sizes.
    Scaling(ScalingArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    schools: Option<usize>,
    #[arg(long)]
    phi_student: Option<f64>,
    #[arg(long)]
    phi_school: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding train.jsonl and val.jsonl.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Directory holding test.jsonl.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    common: Common,
    /// `rsd` or `da`.
    #[arg(long)]
    mechanism: menunet::baselines::Mechanism,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// metrics.csv files written by `evaluate` and `baseline`.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    students: Option<usize>,
    #[arg(long)]
    misreports: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScalingArgs {
    #[command(flatten)]
    common: Common,
    /// Market sizes, ascending.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    let cfg = config::ExperimentConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Generate(a) => commands::generate(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
        Command::Baseline(a) => commands::baseline(cfg, a),
        Command::Compare(a) => commands::compare(cfg, a),
        Command::Audit(a) => commands::audit(cfg, a),
        Command::Scaling(a) => commands::scaling(cfg, a),
    }
}
