use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: empty dimension")]
    EmptyDimension { op: &'static str },

    #[error("{op}: input too short ({len} samples/frames, need at least {min})")]
    InputTooShort {
        op: &'static str,
        len: usize,
        min: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("batch too small for CCC: {0} (need at least 2)")]
    BatchSize(usize),

    #[error("non-finite gradient in {0}")]
    NonFiniteGradient(String),

    #[error("loss scale underflowed below 1 after repeated overflow")]
    UnrecoverableOverflow,

    #[error("label {value} outside [{lo}, {hi}]")]
    LabelRange { value: f64, lo: f64, hi: f64 },

    #[error("audio format error in {path}: {field} is {found}, expected {expected}")]
    AudioFormat {
        path: PathBuf,
        field: &'static str,
        found: String,
        expected: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("unknown sample id `{0}`")]
    MissingSample(String),

    #[error("cache file {path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },

    #[error("{path}: truncated ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("cache fingerprint mismatch: manifest {manifest}, model {model}")]
    Fingerprint { manifest: String, model: String },

    #[error("cache entry {path} disagrees with manifest: {detail}")]
    CacheHeader { path: PathBuf, detail: String },

    #[error("cache build stopped after {completed} samples (last completed: {last:?}): {source}")]
    PartialBuild {
        completed: usize,
        last: Option<String>,
        #[source]
        source: std::io::Error,
    },

    #[error("refusing to overwrite existing cache at {0} built for a different model")]
    CacheClash(PathBuf),

    #[error("statistics error: {0}")]
    Stats(String),

    #[error("report error: {0}")]
    Report(String),

    #[error("seed run failed after completing seeds {completed:?}: {source}")]
    PartialSeeds {
        completed: Vec<u64>,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors a user can fix by changing inputs or flags.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parameter(_)
                | Error::Config { .. }
                | Error::LabelRange { .. }
                | Error::AudioFormat { .. }
                | Error::MissingSample(_)
                | Error::Contract(_)
                | Error::Data(_)
        )
    }
}
