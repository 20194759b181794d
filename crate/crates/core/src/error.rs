use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the library can report.
///
/// Display strings start with a stable kebab-case tag so scripted callers
/// can match on them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty-cloud: point cloud has no points")]
    EmptyCloud,

    #[error("dimension-mismatch at index {index}: expected {expected} entries, found {found}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-finite-value at index {index}")]
    NonFinite { index: usize },

    #[error("no-features: point cloud must carry at least one feature channel")]
    NoFeatures,

    #[error("unsorted-neighborhood: distances not ascending at position {position}")]
    UnsortedNeighborhood { position: usize },

    #[error("invalid-index: neighbor index {index} out of range for {len} points")]
    InvalidIndex { index: usize, len: usize },

    #[error("k-out-of-range: k = {k}, available points = {available}")]
    KOutOfRange { k: usize, available: usize },

    #[error("m-out-of-range: requested {m} samples from {n} points")]
    MOutOfRange { m: usize, n: usize },

    #[error("invalid-radius: radius must be positive and finite, got {0}")]
    InvalidRadius(f64),

    #[error("degenerate-window: K*d = {count}, need at least 2 values")]
    DegenerateWindow { count: usize },

    #[error("degenerate-group: group {group} has {count} values, need at least 2")]
    DegenerateGroup { group: usize, count: usize },

    #[error("bad-split: m = {m} must satisfy 1 <= m < K = {k}")]
    BadSplit { m: usize, k: usize },

    #[error("invalid-epsilon: epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("shape-mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stale-cache: parameters changed since the forward pass")]
    StaleCache,

    #[error("label-out-of-range: label {label} at position {index} not below class count {classes}")]
    LabelOutOfRange {
        index: usize,
        label: usize,
        classes: usize,
    },

    #[error("length-mismatch: {left} predictions vs {right} labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("invalid-spec: {0}")]
    InvalidSpec(String),

    #[error("invalid-config: {0}")]
    InvalidConfig(String),

    #[error("divergence: loss became non-finite in epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("parse-error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("token-count-mismatch at line {line}: expected {expected} tokens, found {found}")]
    TokenCount {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("unsupported-format: {0}")]
    UnsupportedFormat(String),

    #[error("missing-vertex-element: PLY header declares no usable vertex element")]
    MissingVertexElement,

    #[error("tensor-format: {0}")]
    TensorFormat(String),

    #[error("io-error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }
}
