use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("user id {id} out of range (n = {n})")]
    UserOutOfRange { id: usize, n: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("cluster {0} has a single member and cannot be split")]
    SingletonCluster(usize),

    #[error("stale split plan: {0}")]
    StalePlan(String),

    #[error("environment construction failed: {0}")]
    Construction(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
