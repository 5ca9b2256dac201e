//! `diffpath`: command-line frontend for the trajectory-statistic pipeline.
//!
//! Every verb reads a key=value config file, applies `--set` overrides
//! (last one wins), writes the fully resolved config to
//! `<out>/effective.cfg`, and then runs. Re-running a verb from its own
//! effective config reproduces the outputs byte for byte.
//!
//! Exit codes: 0 success; 1 configuration/validation error (the message
//! names the offending key or path); 2 runtime failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use diffpath_core::{ConfigError, RawConfig};

#[derive(Parser)]
#[command(
    name = "diffpath",
    about = "Denoising-trajectory anomaly detection pipeline",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Wrap raw float data (or re-batch existing containers) into a dataset split.
    Convert(CommonArgs),
    /// Train the small convolutional noise predictor on a dataset split.
    TrainDenoiser(CommonArgs),
    /// Run trajectories over a split and record predictions + step errors.
    DumpTrajectories(CommonArgs),
    /// Fit the mixture density on a previously written score table.
    FitGmm(CommonArgs),
    /// Run the full benchmark: score, fit, and report AUROC per dataset pair.
    RunBenchmark(CommonArgs),
    /// Re-emit the report from a finished run-benchmark output directory.
    Report(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Key=value config file for this verb.
    #[arg(long)]
    config: PathBuf,
    /// Override one config key, e.g. --set seed=7 (repeatable, last wins).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory that receives every output file.
    #[arg(long)]
    out: PathBuf,
    /// Suppress progress messages on the error stream.
    #[arg(long)]
    quiet: bool,
}

/// Verb outcomes carry their exit classification with them.
pub enum CliError {
    /// Bad configuration; exit 1. The message names the offending key/path.
    Validation(String),
    /// Failure while running; exit 2.
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

/// Progress logging context.
pub struct Logger {
    quiet: bool,
}

impl Logger {
    fn say(&self, message: std::fmt::Arguments<'_>) {
        if !self.quiet {
            eprintln!("[diffpath] {message}");
        }
    }
}

macro_rules! log {
    ($logger:expr, $($arg:tt)*) => {
        $logger.say(format_args!($($arg)*))
    };
}
pub(crate) use log;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };

    let (args, verb): (&CommonArgs, commands::Verb) = match &cli.command {
        Command::Convert(a) => (a, commands::Verb::Convert),
        Command::TrainDenoiser(a) => (a, commands::Verb::TrainDenoiser),
        Command::DumpTrajectories(a) => (a, commands::Verb::DumpTrajectories),
        Command::FitGmm(a) => (a, commands::Verb::FitGmm),
        Command::RunBenchmark(a) => (a, commands::Verb::RunBenchmark),
        Command::Report(a) => (a, commands::Verb::Report),
    };

    match run(args, verb) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn run(args: &CommonArgs, verb: commands::Verb) -> Result<(), CliError> {
    let logger = Logger { quiet: args.quiet };
    let mut raw = RawConfig::from_file(&args.config)?;
    for assignment in &args.set {
        raw.apply_override(assignment)?;
    }
    commands::dispatch(verb, &raw, &args.out, &logger)
}
