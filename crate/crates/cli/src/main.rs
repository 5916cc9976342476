//! `hexst` command-line front end.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hexst::HexstError;

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "hexst", version, about = "Hexagonal shifted-window transformer for spot-array expression prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// TOML run configuration; missing tables and fields take defaults.
    #[arg(long, short = 'c')]
    pub config: Option<std::path::PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic slide (spots.csv, tokens.bin, transcriptomic.bin).
    Generate(commands::GenerateArgs),
    /// Partition a slide into hexagonal or square windows and export the assignment.
    Partition(commands::PartitionArgs),
    /// Train a model and write the best checkpoint plus a JSON-lines step log.
    Train(commands::TrainArgs),
    /// Score predictions (from a checkpoint or a matrix file) against a slide.
    Eval(commands::EvalArgs),
    /// Compare analytic and finite-difference gradients on a small fixture.
    Gradcheck(commands::GradcheckArgs),
    /// Render per-gene heatmaps as PPM images.
    Render(commands::RenderArgs),
}

/// Why a command failed, carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Failure { code: EXIT_NUMERIC, message: message.into() }
    }
}

impl From<HexstError> for Failure {
    fn from(e: HexstError) -> Self {
        let code = match &e {
            HexstError::Io { .. } | HexstError::Format { .. } => EXIT_IO,
            HexstError::Numeric(_) | HexstError::Consistency(_) | HexstError::SlotCollision { .. } => EXIT_NUMERIC,
            HexstError::Input(_) | HexstError::Structural(_) | HexstError::Degenerate(_) => EXIT_USAGE,
        };
        Failure { code, message: e.to_string() }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Partition(a) => commands::partition(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Render(a) => commands::render(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
