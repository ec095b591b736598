//! `edgesplit`: run episodes, train the learned controller, sweep
//! parameters and summarize results.

mod artifacts;
mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Other(format!("{}: {e}", path.display()))
    }

    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Diverged(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "edgesplit", version, about = "Edge-cloud transformer partitioning simulator")]
struct Cli {
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the commands that read a config.
#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Dotted-path override, e.g. `--set lyapunov.fixed_v=1`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    #[value(name = "V", alias = "v")]
    V,
    Lambda,
    Bandwidth,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one episode; writes the slot log, report and plan heatmap.
    Simulate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        controller: Option<String>,
        /// Training checkpoint for `--controller learned`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the learned controller; writes checkpoint, curves and evaluation reports.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run every (value, seed) cell of a one-parameter sweep.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values. V pins the drift weight, lambda is in
        /// req/s, bandwidth is the peak bandwidth in Mb/s.
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<f64>,
        /// Seeds per value.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        controller: Option<String>,
    },
    /// Aggregate the run reports in a directory into a latency table.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        /// Aggregate reports even when their config hashes differ.
        #[arg(long)]
        force: bool,
    },
    /// Print the default config.
    Defaults,
    /// Print the CSV column schema.
    Schema,
}

/// Prints to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_ignoring_pipe(text: &str) {
    use std::io::Write;
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            args,
            controller,
            checkpoint,
        } => commands::simulate(&args, controller, checkpoint),
        Command::Train { args, resume } => commands::train(&args, resume),
        Command::Sweep {
            args,
            param,
            values,
            seeds,
            controller,
        } => commands::sweep(&args, param, &values, seeds, controller),
        Command::Report { input, force } => commands::report(&input, force),
        Command::Defaults => {
            let text = serde_json::to_string_pretty(&config::RunConfig::default())
                .map_err(|e| CliError::Other(e.to_string()))?;
            print_ignoring_pipe(&text);
            Ok(())
        }
        Command::Schema => {
            let text = serde_json::to_string_pretty(&artifacts::schema())
                .map_err(|e| CliError::Other(e.to_string()))?;
            print_ignoring_pipe(&text);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => tracing::Level::WARN,
        1 => tracing::Level::INFO,
        _ => tracing::Level::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_max_level(level)
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
