use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Divergence,
    Protocol,
    Other,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("window too short: time extent {time} < kernel length {kernel}")]
    WindowTooShort { time: usize, kernel: usize },

    #[error("shape {shape:?} does not hold {len} values")]
    ShapeData { shape: Vec<usize>, len: usize },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid configuration `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("label {label} at row {row} is outside [0, {classes})")]
    Label {
        row: usize,
        label: usize,
        classes: usize,
    },

    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("{0}: no data rows")]
    NoDataRows(PathBuf),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },

    #[error("grid cell (lstm_layers={lstm_layers}, hidden_units={hidden_units}, seed={seed}, validation subject {subject}): {source}")]
    Cell {
        lstm_layers: usize,
        hidden_units: usize,
        seed: u64,
        subject: String,
        #[source]
        source: Box<Error>,
    },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config { .. } | Error::WindowTooShort { .. } => ErrorKind::Config,
            Error::Label { .. }
            | Error::Parse { .. }
            | Error::NoDataRows(_)
            | Error::Data(_)
            | Error::Csv(_) => ErrorKind::Data,
            Error::Divergence { .. } | Error::NonFinite { .. } => ErrorKind::Divergence,
            Error::Protocol(_) => ErrorKind::Protocol,
            Error::Cell { source, .. } => source.kind(),
            _ => ErrorKind::Other,
        }
    }
}
