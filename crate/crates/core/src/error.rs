use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// The experiment or scenario description is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// Vectors handed to a stepper disagree in length.
    #[error("internal error: {0}")]
    Shape(String),

    /// A run-time precondition failed (for instance a persistence window past the horizon).
    #[error("{0}")]
    Runtime(String),

    #[error("I/O error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed JSON in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Json { .. })
    }
}

pub(crate) fn check_len(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!(
            "{what}: expected {expected} entries, got {got}"
        )));
    }
    Ok(())
}
