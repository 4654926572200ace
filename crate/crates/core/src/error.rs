use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// The variants map onto the CLI exit codes: I/O failures exit with 2,
/// everything else is a validation-class failure and exits with 1.
#[derive(Debug, Error)]
pub enum FrmdError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("training error at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("argument error: {0}")]
    Argument(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("report error: {0}")]
    Report(String),

    #[error("missing dependency: {0}")]
    MissingDependency(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FrmdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FrmdError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            FrmdError::Io { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, FrmdError>;
