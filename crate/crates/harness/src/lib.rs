//! Command-line orchestration for cg2a runs: config files, training, evaluation,
//! diagnostics tables and a gradient-combination demo.

pub mod cli;
pub mod commands;
pub mod config;
pub mod fsio;

use std::path::PathBuf;

use cg2a_core::agent::AgentError;
use cg2a_core::diagnostics::DiagnosticsError;
use thiserror::Error;

pub use cli::run;
pub use config::{parse_config, RunConfig, CONFIG_VERSION};

/// Process exit codes, one per failure class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{0}")]
    Other(String),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => exit::CONFIG,
            Self::Io { .. } => exit::IO,
            Self::Numeric(_) => exit::NUMERIC,
            Self::Other(_) => exit::OTHER,
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        if e.is_numeric() {
            Self::Numeric(e.to_string())
        } else if matches!(e, AgentError::Config(_)) {
            Self::Config(e.to_string())
        } else {
            Self::Other(e.to_string())
        }
    }
}

impl From<DiagnosticsError> for HarnessError {
    fn from(e: DiagnosticsError) -> Self {
        match e {
            DiagnosticsError::Io(source) => Self::Io {
                path: PathBuf::from("<diagnostics>"),
                source,
            },
            other => Self::Other(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
