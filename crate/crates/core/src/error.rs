use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "eigendecomposition residual {residual:.3e} exceeds tolerance (near-defective operator)"
    )]
    NearDefective { residual: f64 },

    #[error("eigendecomposition failed to converge")]
    EigenFailure,

    #[error("singular system: {0}")]
    Singular(String),

    #[error("training failed in round {round}, client {client}: {message}")]
    Training {
        round: usize,
        client: usize,
        message: String,
    },

    #[error("labels contain a single class; AUC is undefined")]
    SingleClass,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the caller's inputs (files, flags, formats)
    /// rather than by the computation itself.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::InvalidParameter(_)
        )
    }
}
