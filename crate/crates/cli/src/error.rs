use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_EVALUATOR: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read config {path}: {message}")]
    ConfigFile { path: PathBuf, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] integral::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("cannot write output: {0}")]
    Output(#[from] std::io::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 2 config or schema, 3 evaluator, 4 i/o, 1 anything else.
    pub fn exit_code(&self) -> u8 {
        use integral::Error as E;
        match self {
            CliError::ConfigFile { .. } | CliError::Schema(_) => EXIT_CONFIG,
            CliError::Io { .. } | CliError::Output(_) => EXIT_IO,
            CliError::Csv(e) if e.is_io_error() => EXIT_IO,
            CliError::Csv(_) => EXIT_CONFIG,
            CliError::Core(e) => match e {
                E::EvaluatorUnavailable(_) => EXIT_EVALUATOR,
                E::Io(_) => EXIT_IO,
                E::Config(_)
                | E::UnsupportedVersion { .. }
                | E::EmptyStudy
                | E::MissingRange(_)
                | E::PartialExpertWeights(_)
                | E::DegenerateStrategy(_)
                | E::InvalidResolution(_)
                | E::UnsupportedDomain(_)
                | E::Corrupt { .. }
                | E::ReplayMismatch(_) => EXIT_CONFIG,
                _ => EXIT_OTHER,
            },
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
