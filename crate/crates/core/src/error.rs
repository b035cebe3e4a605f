use std::path::PathBuf;

/// Errors raised by the loss kernels, data pipeline and training loop.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    /// Caller violated a precondition (bad argument, mismatched inputs).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("gamma must be positive and finite, got {0}")]
    InvalidGamma(f64),

    /// Every alignment path crosses a forbidden cell, or the cost carries no
    /// information about the prediction.
    #[error("degenerate cost: {0}")]
    DegenerateCost(String),

    #[error("parse error in {path} at row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("training failed: {0}")]
    Training(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_)
            | Error::ShapeMismatch(_)
            | Error::InvalidGamma(_)
            | Error::DegenerateCost(_) => 1,
            Error::Parse { .. } | Error::Data(_) | Error::Io { .. } | Error::Json(_) => 2,
            Error::Training(_) => 3,
        }
    }
}
