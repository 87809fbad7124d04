use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: String, actual: String },

    #[error("no stripe found: no row mean exceeds {threshold}")]
    NoStripe { threshold: f64 },

    #[error("at theta={theta_deg} deg, l_b={l_b} cd/m^2: {source}")]
    GridPoint {
        theta_deg: f64,
        l_b: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("training reached held-out accuracy {accuracy:.4}, below the required {required:.4}")]
    Training { accuracy: f64, required: f64 },

    #[error("classifier protocol error in field `{field}`: {message}")]
    Protocol { field: String, message: String },

    #[error("classifier session error: {0}")]
    Session(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("malformed image {path:?}: {message}")]
    ImageFormat { path: Option<PathBuf>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dimension(expected: impl ToString, actual: impl ToString) -> Self {
        Error::Dimension {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn protocol(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Protocol {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } => 1,
            Error::Protocol { .. } | Error::Session(_) => 3,
            Error::GridPoint { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}
