use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("fit error: label {label} ({name}) has no samples of class {class}")]
    EmptyClass {
        label: usize,
        name: String,
        class: u8,
    },

    #[error("synthetic spec error: {0}")]
    Spec(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("no data rows")]
    NoData,

    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss ({state})")]
    Diverged {
        epoch: usize,
        step: usize,
        state: String,
    },

    #[error("no checkpoint selected")]
    NoCheckpointSelected,

    #[error("incompatible mode: {0}")]
    IncompatibleMode(String),

    #[error("empty model: {0}")]
    EmptyModel(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn dim_err(what: &str, expected: usize, got: usize) -> Error {
    Error::Dimension(format!("{what}: expected {expected}, got {got}"))
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(dim_err(what, expected, got))
    }
}
