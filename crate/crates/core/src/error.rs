use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: column `{column}` holds non-numeric value {value:?}")]
    NonNumericFeature {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}: label {label} is out of range for {num_labels} labels")]
    LabelOutOfRange {
        row: usize,
        label: String,
        num_labels: usize,
    },

    #[error("row {row}: cluster id {value:?} is not a non-negative integer")]
    BadClusterId { row: usize, value: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("feature vector {row} has length {got}, expected {expected}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("k-means needs 1 <= k <= n, got k={k} with n={n}")]
    InvalidK { k: usize, n: usize },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("cluster {0} is empty")]
    EmptyCluster(usize),

    #[error("cluster {cluster} has size {size}, but at least {required} is required")]
    ClusterTooSmall {
        cluster: usize,
        size: usize,
        required: f64,
    },

    #[error("matrix is numerically singular (pivot {pivot:e} at column {column})")]
    SingularMatrix { column: usize, pivot: f64 },

    #[error("mechanism requires binary labels, dataset has {0} labels")]
    NotBinary(usize),

    #[error("training diverged at epoch {epoch} (lr={lr}, l2={l2}, batch={batch}); lower the learning rate")]
    Divergence {
        epoch: usize,
        lr: f64,
        l2: f64,
        batch: usize,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error("invalid sweep config: {0}")]
    Config(String),
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
