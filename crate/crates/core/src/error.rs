use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no records")]
    NoRecords,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("invalid time series: {0}")]
    InvalidSeries(String),

    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),

    #[error("all columns are constant")]
    AllColumnsConstant,

    #[error("{path}:{line}: malformed row: {reason}")]
    MalformedRow {
        path: PathBuf,
        line: u64,
        reason: String,
    },

    #[error("{path}:{line}: invalid `{field}`: {reason}")]
    InvalidField {
        path: PathBuf,
        line: u64,
        field: &'static str,
        reason: String,
    },

    #[error("{path}: unexpected header, expected `{expected}`")]
    BadHeader { path: PathBuf, expected: String },

    #[error("{path}:{line}: duplicate timestamp {timestamp}")]
    DuplicateTimestamp {
        path: PathBuf,
        line: u64,
        timestamp: i64,
    },

    #[error("unknown adapter `{0}`")]
    UnknownAdapter(String),

    #[error("adapter `{adapter}` failed after {retries} retries: {reason}")]
    Adapter {
        adapter: String,
        retries: u32,
        reason: String,
    },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("fold {fold}: {source}")]
    Fold {
        fold: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("expected {expected} features, got {got}")]
    ArityMismatch { expected: usize, got: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("value {value} at tree {tree} node {node} overflows at {scale_bits} fractional bits")]
    Overflow {
        tree: usize,
        node: usize,
        value: f64,
        scale_bits: u32,
    },

    #[error("truncated model bytes")]
    Truncated,

    #[error("unsupported format version {0}")]
    BadVersion(u8),

    #[error("{0} trailing bytes after model")]
    TrailingBytes(usize),

    #[error("bad magic bytes")]
    BadMagic,

    #[error("tree {tree} node {node}: {reason}")]
    BadNodeTable {
        tree: usize,
        node: usize,
        reason: String,
    },

    #[error("{0}")]
    Config(String),

    #[error("missing `{artifact}`: run {stage} first")]
    MissingUpstream {
        stage: &'static str,
        artifact: String,
    },

    #[error("stale upstream `{artifact}`: rerun {stage}")]
    StaleUpstream {
        stage: &'static str,
        artifact: String,
    },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
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

    /// True for errors caused by bad input or configuration rather than a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::InvalidParam { .. } | Error::Config(_) | Error::UnknownAdapter(_) => true,
            Error::Stage { source, .. } | Error::Fold { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}
