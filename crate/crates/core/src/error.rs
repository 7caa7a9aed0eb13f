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

    #[error("{path}: bad magic {found:?}, expected \"OVNT\"")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: unsupported tensor format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u8 },

    #[error("{path}: unknown dtype code {code}")]
    UnknownDtype { path: PathBuf, code: u8 },

    #[error("{path}: truncated tensor, expected {expected} payload bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("empty dimension in tensor shape {dims:?}")]
    EmptyDimension { dims: Vec<usize> },

    #[error("tensor shape {dims:?} needs {expected} bytes of payload, got {found}")]
    PayloadMismatch {
        dims: Vec<usize>,
        expected: usize,
        found: usize,
    },

    #[error("run-length counts sum to {sum}, expected {expected}")]
    RleSumMismatch { sum: u64, expected: u64 },

    #[error("missing scene file {0}")]
    MissingFile(PathBuf),

    #[error("{what}: dimension mismatch, expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        what: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("text embedding row {row} has norm {norm}, expected 1")]
    NonUnitTextRow { row: usize, norm: f32 },

    #[error("frame {frame}: camera-to-world rotation is not orthonormal with det +1")]
    NonRotation { frame: String },

    #[error("{what}: label {label} out of range for {classes} classes")]
    LabelOutOfRange {
        what: String,
        label: u32,
        classes: usize,
    },

    #[error("invalid {field}: {reason}")]
    Invalid { field: String, reason: String },

    #[error("{path}: malformed json: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("checkpoint format version {found} is incompatible with supported version {supported}")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("non-finite gradient in grid {grid} at iteration {iteration}")]
    NonFiniteGradient { grid: &'static str, iteration: u64 },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: u64 },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// True for training aborts caused by NaN/inf values.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. }
        )
    }
}
