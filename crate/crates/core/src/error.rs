use std::path::PathBuf;

/// Errors produced by the library. Every variant is a data or validation
/// problem; usage errors are handled by the CLI layer.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("unknown item id `{0}`")]
    UnknownItem(String),

    #[error("unknown user id `{0}`")]
    UnknownUser(String),

    #[error("item `{0}` has no category")]
    Uncategorized(String),

    #[error("malformed model file: {0}")]
    Model(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("non-finite log-likelihood at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("no path between `{source_id}` and `{target}` in the {knn}-nearest-neighbor graph; try a larger knn")]
    NoPath {
        source_id: String,
        target: String,
        knn: usize,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
