use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub fn io(path: &std::path::Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<gemtomo::Error> for CliError {
    fn from(e: gemtomo::Error) -> Self {
        use gemtomo::Error as E;
        let msg = e.to_string();
        match e {
            E::InvalidParameter(_) | E::ShapeMismatch(_) | E::WrongDomain { .. } => CliError::Validation(msg),
            E::NonFinite(_)
            | E::Numerical(_)
            | E::RangeBoundary { .. }
            | E::PatternNotFound(_)
            | E::NoConvergence { .. } => CliError::Numerical(msg),
            E::Format { .. } | E::Io(_) => CliError::Io(msg),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
