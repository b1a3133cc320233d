use coulomb_lab::LabError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Lab(#[from] LabError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("reproduction mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    /// 2 usage, 3 solver failure, 4 reproduction mismatch, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            Self::Lab(e) => match e {
                LabError::Domain(_) | LabError::Capability(_) | LabError::Parse(_) => 2,
                _ => 3,
            },
            Self::Io(_) => 1,
            Self::Mismatch(_) => 4,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::Io(e.to_string())
    }
}
