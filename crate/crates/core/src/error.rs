use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("unsupported image format in {path}: {message}")]
    UnsupportedFormat { path: PathBuf, message: String },

    #[error("value {value} at index {index} is outside [0, 1]")]
    Range { index: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("inverse transform left imaginary residue {residue:e} (limit {limit:e}); frequency mask is not symmetric")]
    SymmetryViolation { residue: f64, limit: f64 },

    #[error("latent diverged (non-finite) at stage {stage}, timestep {timestep}")]
    Divergence { stage: usize, timestep: usize },

    #[error("transport error: {0}")]
    Transport(#[source] std::io::Error),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("backend contract violated: {0}")]
    Contract(String),

    #[error("backend reported failure: {0}")]
    Remote(String),

    #[error("manifest line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("record {id}: {source}")]
    Record {
        id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input files or arguments rather than a
    /// failure while running.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Schema { .. } => true,
            Error::Record { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}
