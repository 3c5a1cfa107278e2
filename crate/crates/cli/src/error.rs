use std::process::ExitCode;

use fedbary::bregman::BregmanError;
use fedbary::datagen::DataGenError;
use fedbary::dual::solver::SolveError;
use fedbary::federation::ProtocolError;
use fedbary::io::IoError;
use fedbary::measures::LoadError;
use fedbary::oracle::OracleError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad files, flags or instance contents.
    #[error("{0}")]
    Input(String),
    /// Transport or handshake failure, or a failed privacy audit.
    #[error("{0}")]
    Protocol(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Input(_) => ExitCode::from(3),
            CliError::Protocol(_) => ExitCode::from(4),
            CliError::Other(_) => ExitCode::FAILURE,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DataGenError> for CliError {
    fn from(e: DataGenError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Protocol(e.to_string())
    }
}

impl From<BregmanError> for CliError {
    fn from(e: BregmanError) -> Self {
        match e {
            BregmanError::Oracle(_) | BregmanError::Overflow { .. } => CliError::Other(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<SolveError> for CliError {
    fn from(e: SolveError) -> Self {
        match e {
            SolveError::InvalidHyperParams(_) => CliError::Input(e.to_string()),
            SolveError::Protocol(_) | SolveError::BadReport { .. } | SolveError::Pool(_) => {
                CliError::Protocol(e.to_string())
            }
            _ => CliError::Other(e.to_string()),
        }
    }
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}
