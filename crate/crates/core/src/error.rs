use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the synthesis pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("convolution produces an empty output: {0}")]
    EmptyOutput(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("loss does not depend on any tensor that requires a gradient")]
    NoGradient,
    #[error("downsampling requires even spatial extents, got {0}x{1}")]
    OddExtent(usize, usize),
    #[error("spatial extents {height}x{width} are not divisible by {divisor}")]
    NonDivisibleExtent {
        height: usize,
        width: usize,
        divisor: usize,
    },
    #[error("cannot normalize a constant image")]
    ConstantImage,
    #[error("split fractions must be non-negative and sum to 1, got {0:?}")]
    BadFractions(Vec<f64>),
    #[error("reference image has zero energy")]
    ZeroReference,
    #[error("image extent {0} is smaller than the {1}x{1} window")]
    TooSmall(usize, usize),
    #[error("{0} out of range: {1}")]
    OutOfRange(&'static str, String),
    #[error("non-finite value detected: {0}")]
    NanDetected(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("unknown case id {0}")]
    UnknownCase(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::CorruptHeader {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
