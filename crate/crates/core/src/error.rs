use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input or configuration. The first field names the offending path.
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("non-finite state at step {step}")]
    BlowUp { step: usize },

    #[error("{0}")]
    Numerical(String),

    #[error("{0}")]
    Precondition(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Error::Precondition(message.into())
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Error::Numerical(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
