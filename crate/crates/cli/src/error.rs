use serde_json::json;
use thiserror::Error;

use nolan_core::error::{BridgeError, EvalError, SyntheticError};

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, an unreadable or invalid config file, missing inputs.
    #[error("{0}")]
    Config(String),
    /// A source or adapter misbehaved while the run was executing.
    #[error("{0}")]
    Source(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Source(_) | CliError::Runtime(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Source(_) => "source",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// The single-line JSON record printed on stderr.
    pub fn diagnostic(&self) -> String {
        json!({
            "level": "error",
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::SourceUnavailable(_) => CliError::Source(e.to_string()),
            EvalError::InvalidSweep(_) | EvalError::UnknownScene(_) | EvalError::EmptySuite | EvalError::NoRuns => {
                CliError::Config(e.to_string())
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        CliError::Source(e.to_string())
    }
}

impl From<SyntheticError> for CliError {
    fn from(e: SyntheticError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
