use thiserror::Error;

/// Errors produced by the retargeting pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed skeleton: {0}")]
    MalformedSkeleton(String),

    #[error("degenerate skeleton: {0}")]
    DegenerateSkeleton(String),

    #[error("invalid bone mapping: {0}")]
    InvalidMapping(String),

    #[error("unsupported topology: {0}")]
    UnsupportedTopology(String),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("job cancelled")]
    Cancelled,
}

impl Error {
    pub fn parse(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerical machinery (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
