//! `modpol`: data generation, training, evaluation and the modality ablation.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "modpol", version, about = "Modality-augmented diffusion policies on a desk-scale simulator")]
struct Cli {
    /// TOML file with [gen_data], [train], [eval] and [ablate] sections; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate scripted demonstrations into a dataset file.
    GenData(GenDataArgs),
    /// Train a policy on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint offline (action error) or online (rollouts).
    Eval(EvalArgs),
    /// Run the modality ablation and write its table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long, value_parser = ["simGR1", "simG1"])]
    embodiment: Option<String>,
    #[arg(long)]
    episodes: Option<usize>,
    /// Episode i is generated from seed + i.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    depth_noise: Option<f64>,
    #[arg(long)]
    miss_probability: Option<f64>,
    /// Store RGB only.
    #[arg(long)]
    no_depth: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// baseline, contact_state, contact_encoder, depth or depth_contact_state.
    #[arg(long)]
    modality: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// binary or forces.
    #[arg(long)]
    contact_input: Option<String>,
    /// flow_match or ddpm_eps.
    #[arg(long)]
    objective: Option<String>,
    /// velocity or noise.
    #[arg(long)]
    head: Option<String>,
    /// Continue from a checkpoint written with its optimizer state.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Offline,
    Online,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Replay the recorded actions of --data instead of a checkpoint.
    #[arg(long)]
    replay: bool,
    /// Use the scripted expert instead of a checkpoint.
    #[arg(long)]
    expert: bool,
    #[arg(long, value_enum)]
    mode: Option<EvalMode>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of rollouts.
    #[arg(long)]
    n: Option<usize>,
    /// First rollout seed (online) or window sampling seed (offline); also seeds the sampler.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    replan_every: Option<usize>,
    /// Environment embodiment; defaults to the policy's.
    #[arg(long, value_parser = ["simGR1", "simG1"])]
    embodiment: Option<String>,
    /// Allow running a policy on another embodiment through the state/action adapter.
    #[arg(long)]
    zero_shot: bool,
    #[arg(long, default_value = "reports")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Dataset of the evaluated embodiment.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Dataset of the other embodiment, used to train the zero-shot row.
    #[arg(long)]
    source_data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    windows: Option<usize>,
    #[arg(long)]
    replan_every: Option<usize>,
    #[arg(long)]
    jobs: Option<usize>,
}

/// Why a command stopped: bad input (exit 2) or a failure while running (exit 1).
#[derive(Debug)]
enum Failure {
    Usage(String),
    Run(modpol::Error),
}

impl From<modpol::Error> for Failure {
    fn from(e: modpol::Error) -> Self {
        match e {
            modpol::Error::Config(_) | modpol::Error::UnknownEmbodiment(_) | modpol::Error::UnknownInstruction(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Run(other),
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::GenData(a) => commands::gen_data(a, &file),
        Command::Train(a) => commands::train_cmd(a, &file),
        Command::Eval(a) => commands::eval(a, &file),
        Command::Ablate(a) => commands::ablate(a, &file),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
