use thiserror::Error;

/// Failures of a command, each tied to a process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or input files.
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Input(gpmix_core::Error),

    /// The optimizer or linear algebra gave up.
    #[error(transparent)]
    Numerical(gpmix_core::Error),

    /// A verification command ran fine but its check did not hold.
    #[error("{0}")]
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::CheckFailed(_) => 1,
            CliError::Usage(_) | CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<gpmix_core::Error> for CliError {
    fn from(e: gpmix_core::Error) -> Self {
        use gpmix_core::Error as E;
        match e {
            E::Numerical { .. } | E::NonFinite(_) | E::SingularKernel { .. } => CliError::Numerical(e),
            e => CliError::Input(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;
