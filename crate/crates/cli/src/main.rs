mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ehjscc::Execution;

use crate::commands::Context;
use crate::config::Loaded;
use crate::error::CliError;
use crate::output::Format;

/// Transmission policies for an energy-harvesting source/channel link.
#[derive(Debug, Parser)]
#[command(name = "ehjscc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Directory for output files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the search and simulation seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Evaluate independent work items one at a time.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the distortion lower bound.
    Bound,
    /// Solve the policy for the configured constants.
    Solve,
    /// Search for the best constants.
    Search,
    /// Compare adaptive and constant-mismatch policies over capacities.
    Sweep,
    /// Monte Carlo simulation of a solved or stored policy.
    Simulate,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Config("--config <path> is required".into()))?;
    let ctx = Context {
        config: Loaded::from_path(&path)?,
        out: cli.out,
        seed: cli.seed,
        format: cli.format,
        exec: if cli.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
    };
    match cli.command {
        Command::Bound => commands::bound(&ctx),
        Command::Solve => commands::solve(&ctx),
        Command::Search => commands::search(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Simulate => commands::simulate(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
