use bronchonav::Error;
use thiserror::Error;

/// Exit status for bad arguments or unusable input files.
pub const EXIT_INPUT: u8 = 2;
/// Exit status for failures while computing.
pub const EXIT_RUNTIME: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let input = match &e {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Parse { .. }
            | Error::EmptyMesh
            | Error::NotWatertight
            | Error::ManifestMismatch(_)
            | Error::InvalidParams(_)
            | Error::SizeMismatch(_)
            | Error::MalformedCsv(_)
            | Error::TooSmall(_)
            | Error::EmptyObservation(_) => true,
            _ => false,
        };
        if input {
            CliError::Input(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}
