use std::path::PathBuf;

use thiserror::Error;

/// Broad classification of failures, used to pick process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments or configuration.
    Usage,
    /// Unreadable, malformed or empty data.
    Data,
    /// Non-finite values or numerically impossible requests.
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("interaction (user {user}, item {item}) out of range for {num_users} users and {num_items} items")]
    IdOutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("alpha must be positive, got {0}")]
    InvalidAlpha(f64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("node {0} has no neighbors")]
    EmptyNeighborhood(usize),

    #[error("overlay adds edge ({node}, {neighbor}) which already exists")]
    OverlayConflict { node: usize, neighbor: usize },

    #[error("adjacency snapshot {found} does not match the forward pass snapshot {expected}")]
    SnapshotMismatch { expected: u64, found: u64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{0}")]
    Data(String),

    #[error("training diverged: non-finite loss {loss} at epoch {epoch}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidAlpha(_)
            | Error::InvalidArgument(_)
            | Error::Config(_)
            | Error::Shape(_) => ErrorClass::Usage,
            Error::Diverged { .. } | Error::Numeric(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
