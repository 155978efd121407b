//! `mipt`: simulate monitored circuits, analyze and decode their records, and
//! train or evaluate QuAN classifiers.

mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

/// Error carrying the process exit code: 2 for invalid input, 1 otherwise.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError { code: 1, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<mipt_core::Error> for CliError {
    fn from(e: mipt_core::Error) -> Self {
        use mipt_core::Error::*;
        match e {
            InvalidArgument(_) | QubitOutOfRange { .. } | SameQubit(_) | Metadata(_) | InsufficientData(_) => CliError::usage(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "mipt", version, about = "Monitored-circuit simulation, decoding and QuAN training")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Distinguish,
    Phase,
    Refqubit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Initial {
    Psi,
    Phi,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecodeMode {
    Exact,
    Mc,
    Trajectory,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    SizeBiased,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    PorterThomas,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ties {
    Half,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    #[value(name = "M")]
    M,
    #[value(name = "N")]
    N,
    #[value(name = "L")]
    L,
    Gamma,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample measurement trajectories into one file per (gamma, initial state).
    Simulate {
        #[arg(long, value_enum)]
        task: Task,
        #[arg(long = "L")]
        l: usize,
        /// Single value or comma-separated list.
        #[arg(long, value_delimiter = ',', required = true)]
        gamma: Vec<f64>,
        #[arg(long)]
        shots: usize,
        #[arg(long)]
        seed: u64,
        /// Initial state (state distinguishing only; defaults to psi).
        #[arg(long, value_enum)]
        initial: Option<Initial>,
        /// Depolarizing rates `p1q,p2q`.
        #[arg(long, value_delimiter = ',', num_args = 1)]
        noise: Option<Vec<f64>>,
        /// Also write the log-likelihood of every record under both initial
        /// states (state distinguishing only).
        #[arg(long)]
        duals: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Histogram of empirical Born probabilities at one time slice.
    Probdist {
        #[arg(long = "in")]
        input: PathBuf,
        /// Time slice, 1 to 2L.
        #[arg(long)]
        time: usize,
        /// Add all cyclic translations of every record.
        #[arg(long)]
        translate: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Probability of inferring the correct initial state.
    Decode {
        #[arg(long, value_enum)]
        mode: DecodeMode,
        /// Exact mode: outcome distribution under psi, comma-separated.
        #[arg(long, value_delimiter = ',')]
        psi_probs: Option<Vec<f64>>,
        /// Exact mode: outcome distribution under phi, comma-separated.
        #[arg(long, value_delimiter = ',')]
        phi_probs: Option<Vec<f64>>,
        /// Set size.
        #[arg(long = "N")]
        n: Option<usize>,
        /// Hilbert-space dimension (mc mode).
        #[arg(long = "D")]
        d: Option<f64>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_enum, default_value = "size-biased")]
        estimator: Estimator,
        #[arg(long, value_enum, default_value = "porter-thomas")]
        model: Model,
        #[arg(long, value_enum, default_value = "half")]
        ties: Ties,
        /// Trajectory mode: file simulated from psi with `--duals`.
        #[arg(long)]
        in_psi: Option<PathBuf>,
        /// Trajectory mode: file simulated from phi with `--duals`.
        #[arg(long)]
        in_phi: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a QuAN model from a key = value config file.
    Train { config: PathBuf },
    /// Mean predictions per gamma, P_corr and gamma* of a trained model.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in", value_delimiter = ',', required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Repeated trainings over one axis of a key = value config file.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        /// Loss thresholds for M* (M axis only).
        #[arg(long, value_delimiter = ',', default_value = "0.1")]
        epsilon: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { task, l, gamma, shots, seed, initial, noise, duals, out } => {
            commands::simulate(&commands::SimulateArgs { task, l, gammas: gamma, shots, seed, initial, noise, duals, out })
        }
        Command::Probdist { input, time, translate, out } => commands::probdist(&input, time, translate, out.as_deref()),
        Command::Decode { mode, psi_probs, phi_probs, n, d, samples, estimator, model, ties, in_psi, in_phi, seed, out } => {
            commands::decode(&commands::DecodeArgs { mode, psi_probs, phi_probs, n, d, samples, estimator, model, ties, in_psi, in_phi, seed, out })
        }
        Command::Train { config } => commands::train(&config),
        Command::Eval { model, input, seed, out } => commands::eval(&model, &input, seed, out.as_deref()),
        Command::Sweep { config, axis, values, reps, epsilon, out } => commands::sweep(&config, axis, &values, reps, &epsilon, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
