pub mod audit;
pub mod baseline;
pub mod compare;
pub mod gen;
pub mod oracle;
pub mod solve;

use std::path::Path;

use fedbary::measures::ProblemInstance;

use crate::error::CliError;

pub fn load_instance(path: &Path) -> Result<ProblemInstance, CliError> {
    ProblemInstance::load(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::input(format!("{}: {e}", dir.display())))
}

/// Parses `a,b,c` into numbers.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, String> {
    text.split(',')
        .map(|s| s.trim().parse::<T>().map_err(|_| format!("cannot parse `{s}`")))
        .collect()
}
