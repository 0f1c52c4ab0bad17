use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the audit engine.
///
/// QC conditions (degenerate channels, empty bands, low-variance columns) are
/// not errors; they are recorded as flags alongside the values they affect.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid epoch: {0}")]
    InvalidEpoch(String),

    #[error("non-finite input in {context}")]
    NonFinite { context: String },

    #[error("input too short: {context} needs at least {required} samples, got {actual}")]
    TooShort {
        context: String,
        required: usize,
        actual: usize,
    },

    #[error("invalid band [{lo}, {hi}) Hz: {reason}")]
    InvalidBand { lo: f64, hi: f64, reason: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("no training rows left after filtering in {0}")]
    EmptyTrain(String),

    #[error("single-class training labels in {0}")]
    SingleClass(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("row alignment error for {what}: {detail}")]
    Alignment { what: String, detail: String },

    #[error("checksum mismatch in {path}")]
    Checksum { path: PathBuf },

    #[error("format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("adapter refused {cell} at layer {layer}: {reason}")]
    AdapterRefused {
        cell: String,
        layer: usize,
        reason: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
