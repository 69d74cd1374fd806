use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("state error: {0}")]
    State(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("alignment error: {source_path} has {source_lines} lines but {target_path} has {target_lines}")]
    Alignment {
        source_path: PathBuf,
        source_lines: usize,
        target_path: PathBuf,
        target_lines: usize,
    },

    #[error("training diverged at step {step}: loss is {loss}")]
    Training { step: usize, loss: f64 },

    #[error("gradient check error: {0}")]
    Check(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Validation,
    Compute,
    Io,
}

impl FailureClass {
    pub fn exit_code(self) -> i32 {
        match self {
            FailureClass::Validation => 2,
            FailureClass::Compute => 3,
            FailureClass::Io => 4,
        }
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn class(&self) -> FailureClass {
        match self {
            Error::Io { .. } => FailureClass::Io,
            Error::Validation(_)
            | Error::Format { .. }
            | Error::Alignment { .. }
            | Error::Label(_)
            | Error::Input(_)
            | Error::Compatibility(_) => FailureClass::Validation,
            Error::Shape(_)
            | Error::State(_)
            | Error::NonFinite(_)
            | Error::Training { .. }
            | Error::Check(_) => FailureClass::Compute,
        }
    }
}
