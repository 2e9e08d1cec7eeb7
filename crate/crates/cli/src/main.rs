//! `drd-opf`: validate grid cases, fit robust dispatch policies, simulate
//! them and summarise the results.

mod commands;
mod config;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunArgs;

#[derive(Parser, Debug)]
#[command(name = "drd-opf", version, about = "Multi-stage distributionally robust DC optimal power flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse and check a case file.
    Validate(RunArgs),
    /// Fit value functions for each radius and report the root values.
    Solve(RunArgs),
    /// Fit and simulate the policy for each radius (default radius 0).
    Simulate(RunArgs),
    /// Fit and simulate over a list of radii (default 0,1,3,5,10).
    Sweep(RunArgs),
    /// Regenerate tables and plots from an existing report.
    Report(ReportArgs),
}

#[derive(clap::Args, Debug)]
struct ReportArgs {
    /// Directory holding report.json; outputs are rewritten in place.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("I/O error on {path}: {1}", path = .0.display())]
    Io(PathBuf, #[source] std::io::Error),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("plot error: {0}")]
    Plot(String),

    #[error(transparent)]
    Core(#[from] drd_opf::Error),
}

impl CliError {
    /// 0 success, 1 invalid input, 2 I/O, 3 solver failure.
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(..) | CliError::Plot(_) => 2,
            CliError::Config(_) => 1,
            CliError::Core(e) => match e.root_cause() {
                drd_opf::Error::Io { .. } => 2,
                _ if e.is_solver_failure() => 3,
                _ => 1,
            },
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Validate(args) => commands::validate(&args),
        Command::Solve(args) => commands::solve(&args),
        Command::Simulate(args) => commands::simulate(&args),
        Command::Sweep(args) => commands::sweep(&args),
        Command::Report(args) => commands::report(&args.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
