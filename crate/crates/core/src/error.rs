use thiserror::Error;

/// Errors raised by the simulation and reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("wrong domain: expected {expected}, found {found}")]
    WrongDomain { expected: &'static str, found: &'static str },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("optimum of {parameter} lies on the search boundary at {value:e}; widen the range")]
    RangeBoundary { parameter: &'static str, value: f64 },

    #[error("calibration pattern not found (correlation peak {0:.3})")]
    PatternNotFound(f64),

    #[error("fit did not converge: {message} (rms log residual {residual:.3e})")]
    NoConvergence { message: String, residual: f64 },

    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn format(format: &'static str, msg: impl Into<String>) -> Self {
        Error::Format { format, message: msg.into() }
    }
}
