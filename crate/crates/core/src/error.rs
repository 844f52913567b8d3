//! Error types shared across the engine.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("{op}: dimension mismatch ({detail})")]
    DimMismatch { op: &'static str, detail: String },

    #[error("degenerate vector: norm {norm:.3e} is at or below eps {eps:.3e}")]
    DegenerateVector { norm: f64, eps: f64 },

    #[error("{what} is empty")]
    EmptyInput { what: &'static str },

    #[error("batch too small: {size} (InfoNCE needs at least 2 pairs)")]
    BatchTooSmall { size: usize },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: String },

    #[error("empty audio token sequence")]
    EmptyAudio,

    #[error("record {id}: {msg}")]
    Record { id: String, msg: String },

    #[error("manifest {path} line {line}: {msg}")]
    Manifest {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("tensor file {path}: {msg}")]
    TensorFile { path: String, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint not found: {0}")]
    CheckpointNotFound(String),

    #[error("config mismatch: {field} is {actual} here but {expected} in checkpoint")]
    ConfigMismatch {
        field: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("training aborted at step {step}: non-finite loss (batch ids: {batch_ids:?})")]
    NonFiniteLoss { step: usize, batch_ids: Vec<String> },

    #[error("triplet {triplet_id}: target {target_id} not present in gallery")]
    MissingTarget {
        triplet_id: String,
        target_id: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
