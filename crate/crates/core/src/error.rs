use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CgpError>;

#[derive(Debug, Error)]
pub enum CgpError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing dataset file {}", .0.display())]
    MissingFile(PathBuf),

    /// A malformed line in one of the dataset files.
    #[error("{file}:{line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("stale forward cache: model changed since the forward pass")]
    StaleCache,

    #[error("non-finite training loss at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CgpError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CgpError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            CgpError::Divergence { .. } => 3,
            _ => 2,
        }
    }
}
