use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit, grouped so callers can map them to
/// distinct exit codes (missing input / validation / I/O).
#[derive(Debug, Error)]
pub enum Error {
    /// A referenced input (file, directory, bank category, ...) does not exist.
    #[error("missing input: {0}")]
    MissingInput(String),

    /// A file exists but its contents do not match the expected format.
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A value or argument violates a documented invariant.
    #[error("{0}")]
    Validation(String),

    /// An underlying read/write failure, tagged with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// The placeability trainer hit a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        loss: f64,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
