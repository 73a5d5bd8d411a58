//! `jfp`: data generation, training, evaluation and sweeps for the learned
//! feedback-and-precoding simulator.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad configuration, arguments or inputs. Exit code 2.
    Config(String),
    /// Non-finite or singular numerics. Exit code 3.
    Numerical(String),
}

impl From<jfp_core::Error> for CliError {
    fn from(e: jfp_core::Error) -> Self {
        match e {
            jfp_core::Error::Numerical(_) | jfp_core::Error::Singular(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Parser)]
#[command(name = "jfp", version, about = "Learned CSI feedback and multiuser precoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the desk-scale default configuration.
    InitConfig {
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a channel dataset.
    GenData(GenDataArgs),
    /// Train an end-to-end model or the reconstruction baseline.
    Train(TrainArgs),
    /// Evaluate checkpoints and classical baselines over an SNR grid.
    Eval(EvalArgs),
    /// Evaluate one checkpoint per latent size over an SNR grid.
    SweepOverhead(SweepArgs),
    /// Run generation, training, evaluation and the overhead sweep.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to `paths.dataset`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the sum of the configured splits.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    Jfpnet,
    DjsccMse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Ablation {
    Jmp,
    Pa,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint directory, defaults to `paths.checkpoints`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "jfpnet")]
    mode: Mode,
    #[arg(long, value_enum)]
    ablate: Option<Ablation>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Latent size `n`, overriding the configured one.
    #[arg(long)]
    latent_n: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// End-to-end checkpoints to evaluate.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    checkpoint: Vec<PathBuf>,
    /// Reconstruction model used by the DJSCC_MSE baselines.
    #[arg(long)]
    recon_checkpoint: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_grid: Option<Vec<f64>>,
    /// Any of PF, PF_BD_WF, DJSCC_MSE, DJSCC_MSE_BD_WF.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<String>,
    /// Defaults to `paths.results/eval.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Directory holding `jfpnet-n<n>.jfpw` for every `n`.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_grid: Option<Vec<f64>>,
    /// Defaults to `paths.results/overhead.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::InitConfig { out } => commands::init_config(&out),
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::SweepOverhead(a) => commands::sweep_overhead(a),
        Command::Reproduce(a) => commands::reproduce(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}
