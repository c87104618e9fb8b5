use splitcvl::privmetrics::PrivacyError;
use splitcvl::retrieval::RetrievalError;
use splitcvl::rlopt::RlError;
use splitcvl::trico::TriCoError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    /// 2 for anything the user can fix in the inputs, 3 when the inputs are
    /// valid but the scenario cannot be served.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 2,
            CliError::Infeasible(_) | CliError::Runtime(_) => 3,
        }
    }
}

impl From<TriCoError> for CliError {
    fn from(e: TriCoError) -> Self {
        match e {
            TriCoError::Infeasible(_) => CliError::Infeasible(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<RlError> for CliError {
    fn from(e: RlError) -> Self {
        match e {
            RlError::Scenario(t) => t.into(),
            RlError::InvalidConfig(m) => CliError::Config(format!("optimizer: {m}")),
            RlError::NonFinite => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        CliError::Config(format!("retrieval: {e}"))
    }
}

impl From<PrivacyError> for CliError {
    fn from(e: PrivacyError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}
