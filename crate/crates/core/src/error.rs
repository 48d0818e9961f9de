use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("{kind} {id:?} referenced by {from:?} does not exist")]
    DanglingReference {
        kind: &'static str,
        id: String,
        from: String,
    },

    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },

    #[error("validation failed for {id:?}: {message}")]
    Validation { id: String, message: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("missing feature vector for photo {0:?}")]
    MissingFeature(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown user {0:?}")]
    UnknownUser(String),

    #[error("training diverged at epoch {epoch}, iteration {iteration}: loss is {loss}")]
    Diverged {
        epoch: usize,
        iteration: usize,
        loss: f64,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors the CLI reports as bad input (exit 1) rather than a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Parse { .. }
                | Error::DanglingReference { .. }
                | Error::DuplicateId { .. }
                | Error::Validation { .. }
                | Error::Format(_)
                | Error::MissingFeature(_)
                | Error::NonFinite(_)
                | Error::InvalidArgument(_)
                | Error::UnknownUser(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
