//! `fedbary`: generate instances, run the federated dual solver or the
//! entropic baseline, compare results and audit round logs.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod cmd;
mod error;

use error::CliError;

#[derive(Parser)]
#[command(name = "fedbary", version, about = "Federated Wasserstein barycenters by dual subgradient ascent")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance file.
    Gen(cmd::gen::GenArgs),
    /// Run the federated dual solver.
    Solve(cmd::solve::SolveArgs),
    /// Run the entropic free-support baseline.
    Baseline(cmd::baseline::BaselineArgs),
    /// Tabulate result files computed on the same instance.
    Compare(cmd::compare::CompareArgs),
    /// Exact transport values and brute-force optima.
    Oracle(cmd::oracle::OracleArgs),
    /// Check a round log for disclosures beyond the per-candidate reports.
    Audit(cmd::audit::AuditArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            // clap exits with 2 on bad usage, which here means the iteration cap
            return if usage { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let outcome = match cli.command {
        Command::Gen(a) => cmd::gen::run(a),
        Command::Solve(a) => cmd::solve::run(a),
        Command::Baseline(a) => cmd::baseline::run(a),
        Command::Compare(a) => cmd::compare::run(a),
        Command::Oracle(a) => cmd::oracle::run(a),
        Command::Audit(a) => cmd::audit::run(a),
    };
    match outcome {
        Ok(code) => code.into(),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Successful exit statuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Done,
    IterationCap,
}

impl From<Status> for ExitCode {
    fn from(s: Status) -> Self {
        match s {
            Status::Done => ExitCode::SUCCESS,
            Status::IterationCap => ExitCode::from(2),
        }
    }
}

pub type CliResult = Result<Status, CliError>;
