use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error(
        "sampling rate mismatch: impulse response at {impulse} Hz, acquisition at {acquisition} Hz"
    )]
    SamplingRateMismatch { impulse: f64, acquisition: f64 },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("no point-source peak above {threshold:.3e} (noise floor {floor:.3e})")]
    NoPeak { threshold: f64, floor: f64 },

    #[error("image {path} is {width}x{height}, smaller than the 64x64 minimum")]
    UndersizedImage {
        path: PathBuf,
        width: u32,
        height: u32,
    },

    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },

    #[error("record {index}: dimension mismatch, manifest declares {expected} but {found}")]
    DimensionMismatch {
        index: usize,
        expected: String,
        found: String,
    },

    #[error("record {index}: truncated blob {path}")]
    TruncatedBlob { index: usize, path: PathBuf },

    #[error("missing manifest at {0}")]
    MissingManifest(PathBuf),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("LUT cache {path}: {reason}")]
    Cache { path: PathBuf, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
