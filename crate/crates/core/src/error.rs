use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the selection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("no valid windows of length {horizon} in buffer")]
    NoValidWindows { horizon: usize },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("insufficient stochastic passes: need at least 2, got {0}")]
    InsufficientPasses(usize),

    #[error("non-positive quality score {value} at index {index}")]
    NonPositiveQuality { index: usize, value: f64 },

    #[error("C({n}, {k}) subsets exceeds the exhaustive search guard of {guard}; use greedy_map")]
    CombinatorialGuard { n: usize, k: usize, guard: u64 },

    #[error("k = {k} exceeds the numerical rank {rank} of the kernel")]
    RankDeficient { k: usize, rank: usize },

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit status used by the command-line tool: 2 for bad
    /// configuration or arguments, 3 for empty or degenerate input data,
    /// 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::InvalidArgument(_)
            | Error::InsufficientPasses(_)
            | Error::CombinatorialGuard { .. }
            | Error::Parse { .. }
            | Error::Json(_)
            | Error::Io { .. } => 2,
            Error::NoValidWindows { .. }
            | Error::Degenerate(_)
            | Error::InvalidEpisode(_)
            | Error::DimensionMismatch { .. } => 3,
            Error::NonPositiveQuality { .. }
            | Error::RankDeficient { .. }
            | Error::NonFinite { .. }
            | Error::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
