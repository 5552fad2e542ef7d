use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid span: {0}")]
    InvalidSpan(String),

    #[error("IoP is undefined for a zero-length prediction")]
    ZeroLengthPrediction,

    #[error("no fixture for {role} request: {key}")]
    FixtureMissing { role: &'static str, key: String },

    /// Network or server failure. `retryable` is false once retries are exhausted.
    #[error("transport error on {endpoint}: {message}")]
    Transport {
        endpoint: String,
        message: String,
        retryable: bool,
    },

    #[error("malformed response from {endpoint}: {message}")]
    MalformedResponse { endpoint: String, message: String },

    /// A failure recorded in a transcript, replayed with its original message.
    #[error("{0}")]
    Replayed(String),

    #[error("record deadline exceeded")]
    DeadlineExceeded,

    #[error("all reasoning paths failed")]
    AllPathsFailed,

    #[error("refined cluster has zero total weight")]
    ZeroClusterWeight,

    #[error("refined boundaries are reversed: start {start} > end {end}")]
    ReversedBoundaries { start: f64, end: f64 },

    #[error("cannot aggregate an empty sample list")]
    EmptySamples,

    #[error("duplicate qid {0}")]
    DuplicateQid(String),

    #[error("invalid record {qid}: {message}")]
    InvalidRecord { qid: String, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        source: serde_json::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
