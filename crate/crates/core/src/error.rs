use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("wavelength {value} nm is outside the valid range [{min}, {max}] nm")]
    OutOfRange { value: f64, min: f64, max: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite values in {what} at stage {stage}")]
    NonFinite { stage: usize, what: String },

    #[error("training diverged at step {step}: {reason}")]
    Diverged { step: u64, reason: String },

    #[error("dense operator would have {entries} entries (limit {limit}); use the matrix-free operator instead")]
    TooLarge { entries: usize, limit: usize },

    #[error("wavelength lists differ: only in first {only_left:?}, only in second {only_right:?}")]
    WavelengthMismatch {
        only_left: Vec<f64>,
        only_right: Vec<f64>,
    },

    #[error("{path}: data.bin holds {actual} bytes, header implies {expected}")]
    LengthMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("{path}: wavelengths are not strictly increasing")]
    NonMonotoneWavelengths { path: PathBuf },

    #[error("{path}: payload contains a non-finite value at index {index}")]
    NonFinitePayload { path: PathBuf, index: usize },

    #[error("{path}: malformed header: {reason}")]
    Header { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
