use std::path::PathBuf;

use clap::Args;
use fedbary::federation::{privacy_audit, RoundLog};

use super::load_instance;
use crate::error::CliError;
use crate::{CliResult, Status};

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Round log written by `solve` (JSON lines).
    log: PathBuf,
    /// Instance the run was computed on.
    instance: PathBuf,
}

pub fn run(args: AuditArgs) -> CliResult {
    let instance = load_instance(&args.instance)?;
    let log = RoundLog::load(&args.log).map_err(|e| CliError::input(format!("{}: {e}", args.log.display())))?;
    let report = privacy_audit(&log, &instance);
    print!("{report}");
    if report.passed {
        println!();
        Ok(Status::Done)
    } else {
        let first = report.first_failure().expect("failed audit has a failure");
        Err(CliError::Protocol(format!("privacy audit failed at message {}", first.index)))
    }
}
