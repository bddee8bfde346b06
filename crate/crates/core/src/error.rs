use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dataset root does not exist: {0}")]
    MissingRoot(PathBuf),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("food categories missing from label table: {0:?}")]
    MissingCategories(Vec<String>),

    #[error("illegal label token {token:?} for field {field}")]
    IllegalLabelToken { field: String, token: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{series} force threshold not reached")]
    ThresholdNotReached { series: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("waveform shorter than one frame ({len} < {frame_length})")]
    WaveformTooShort { len: usize, frame_length: usize },

    #[error("mel filter {index} has empty support; reduce n_mels or increase n_fft")]
    EmptyFilterSupport { index: usize },

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("neighbor count n={n} must be smaller than the sample count N={total}")]
    NeighborCountTooLarge { n: usize, total: usize },

    #[error("no anchor has both a positive and a negative candidate")]
    NoEligibleAnchor,

    #[error("sample identifier mismatch: {0}")]
    IdentifierMismatch(String),

    #[error("samples missing required modality {modality}: {samples:?}")]
    MissingModality {
        modality: String,
        samples: Vec<String>,
    },

    #[error("missing upstream artifact: {0}")]
    MissingArtifact(PathBuf),

    #[error("{0}")]
    Other(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
