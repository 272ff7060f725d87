use memotion::Error;
use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
}

/// Process exit status per failure class.
pub mod exit {
    pub const CONFIG: i32 = 2;
    pub const DATA: i32 = 3;
    pub const MODEL: i32 = 4;
    pub const TRAINING: i32 = 5;
    pub const EVALUATION: i32 = 6;
    pub const IO: i32 = 7;
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Core(e) => match e {
                Error::Io { .. } | Error::Json(_) => exit::IO,
                Error::MalformedRow { .. }
                | Error::LabelOutOfRange { .. }
                | Error::DuplicateId { .. }
                | Error::Image { .. }
                | Error::Data(_) => exit::DATA,
                Error::InvalidArgument(_)
                | Error::UnknownTask(_)
                | Error::Shape(_)
                | Error::UnknownBackbone { .. }
                | Error::Checkpoint(_) => exit::MODEL,
                Error::Training(_) => exit::TRAINING,
                Error::Evaluation(_) => exit::EVALUATION,
            },
        }
    }
}

/// Wraps an I/O failure with the path it concerns.
pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
