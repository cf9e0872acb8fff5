use std::path::PathBuf;

use hipponet::data::DataError;
use hipponet::harness::{HarnessError, ReportError};
use hipponet::model::ModelError;
use serde_json::json;
use thiserror::Error;

/// Process exit statuses; documented in the README.
pub mod exit {
    pub const OK: u8 = 0;
    pub const RUNTIME: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const CONFIG: u8 = 3;
    pub const IO: u8 = 4;
    pub const INCOMPATIBLE: u8 = 5;
    pub const INPUT: u8 = 6;
    pub const NO_EVALUATIONS: u8 = 7;
    pub const CHECK_FAILED: u8 = 8;
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Schema violation, unknown key or invalid value; `path` is the dotted key.
    #[error("{}{message}", path.as_ref().map(|p| format!("{p}: ")).unwrap_or_default())]
    Config { path: Option<String>, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("incompatible options: {0}")]
    Incompatible(String),
    /// Malformed input files: NIfTI, manifests, checkpoints, run logs.
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    NoEvaluations(String),
    #[error("{0}")]
    CheckFailed(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config {
            path: Some(path.into()),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> u8 {
        match self {
            CliError::Config { .. } => exit::CONFIG,
            CliError::Io { .. } => exit::IO,
            CliError::Incompatible(_) => exit::INCOMPATIBLE,
            CliError::Input(_) => exit::INPUT,
            CliError::NoEvaluations(_) => exit::NO_EVALUATIONS,
            CliError::CheckFailed(_) => exit::CHECK_FAILED,
            CliError::Runtime(_) => exit::RUNTIME,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Incompatible(_) => "incompatible_options",
            CliError::Input(_) => "input",
            CliError::NoEvaluations(_) => "no_evaluations",
            CliError::CheckFailed(_) => "check_failed",
            CliError::Runtime(_) => "runtime",
        }
    }

    /// One-line JSON object written to stderr.
    pub fn to_json(&self) -> String {
        let mut body = json!({
            "kind": self.kind(),
            "exit_code": self.code(),
            "message": self.to_string(),
        });
        match self {
            CliError::Config { path: Some(p), .. } => body["key"] = json!(p),
            CliError::Io { path, .. } => body["path"] = json!(path.display().to_string()),
            _ => {}
        }
        json!({ "error": body }).to_string()
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            DataError::Invalid(m) => CliError::Runtime(m),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Config(m) => CliError::Config { path: None, message: m },
            ModelError::Checkpoint(_) => CliError::Input(e.to_string()),
            ModelError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(m) => CliError::Config { path: None, message: m },
            HarnessError::Data(d) => d.into(),
            HarnessError::Model(m) => m.into(),
            HarnessError::Io(source) => CliError::Io {
                path: PathBuf::new(),
                source,
            },
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::NoEvaluations(_) => CliError::NoEvaluations(e.to_string()),
            ReportError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Input(other.to_string()),
        }
    }
}
