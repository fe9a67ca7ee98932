use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Malformed container bytes; `offset` is where decoding stopped.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("training diverged at epoch {epoch}, image {image}: non-finite loss")]
    Divergence { epoch: usize, image: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("{path}: {source}")]
    Path {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn format(offset: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }

    pub(crate) fn path(path: impl Into<std::path::PathBuf>, source: std::io::Error) -> Self {
        Error::Path {
            path: path.into(),
            source,
        }
    }
}
