use std::process::ExitCode;

use ehjscc::policy::PolicyError;
use ehjscc::search::SearchError;
use ehjscc::simulator::SimError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Config(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) | CliError::Io(_) => 4,
        })
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            e if e.is_infeasible() => CliError::Infeasible(e.to_string()),
            PolicyError::InvalidInput(_) | PolicyError::BetaOutOfRange { .. } => {
                CliError::Config(e.to_string())
            }
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::InvalidSpec(m) => CliError::Config(m),
            SearchError::NoFeasiblePoint { .. } => CliError::Infeasible(e.to_string()),
            SearchError::Policy(p) => p.into(),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::InvalidConfig(_) | SimError::ConfigMismatch => CliError::Config(e.to_string()),
            e => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Numerical(format!("json: {e}"))
    }
}
