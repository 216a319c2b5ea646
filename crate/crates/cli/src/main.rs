//! `seqcomm`: train, evaluate, ablate and compare ordering modes, and
//! evaluate the model-return gap bound.

mod commands;
mod out;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "seqcomm", version, about = "Multi-agent sequential communication experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per configured seed.
    Train(RunArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Train several ordering modes over the same seeds and compare them.
    Ablate(AblateArgs),
    /// Evaluate the model-return gap bound for two checkpoints or given inputs.
    Bound(BoundArgs),
    /// Tabulate final returns from existing metrics streams.
    Compare(CompareArgs),
}

#[derive(Args, Clone, Debug, Default)]
pub struct RunArgs {
    /// TOML experiment config; defaults to the matrix game.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// seqcomm, fixed:<ids>, random, simultaneous or nocomm.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Env-step budget per run.
    #[arg(long)]
    pub steps: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Seed of the evaluation episodes; defaults to the run's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Modes to compare, each `mode` or `label=mode`.
    #[arg(long, num_args = 1.., required = true)]
    pub modes: Vec<String>,
    /// Evaluations averaged into a run's final return.
    #[arg(long, default_value_t = 1)]
    pub tail: usize,
}

#[derive(Args, Debug)]
pub struct BoundArgs {
    /// Checkpoint of the data-collecting policy.
    #[arg(long)]
    pub old: Option<PathBuf>,
    #[arg(long)]
    pub new: Option<PathBuf>,
    /// Episodes collected with the old policy as the probe.
    #[arg(long, default_value_t = 8)]
    pub probe_episodes: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epsilon_m: Option<f64>,
    /// Per-level policy divergences, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub epsilon_pi: Vec<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub r_max: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// metrics.jsonl files or run directories.
    #[arg(required = true)]
    pub metrics: Vec<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub tail: usize,
    /// Group by run id instead of mode.
    #[arg(long)]
    pub by_run: bool,
    #[arg(long, default_value = "compare")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Ablate(a) => commands::ablate(a),
        Command::Bound(a) => commands::bound(a),
        Command::Compare(a) => commands::compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
