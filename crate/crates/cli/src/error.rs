use compound_kge::KgeError;
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Kge(#[from] KgeError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// Reports a library error as a usage problem.
    pub fn usage(e: KgeError) -> Self {
        match e {
            KgeError::InvalidArgument(m) => CliError::Usage(m),
            other => CliError::Usage(other.to_string()),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Kge(KgeError::Lookup { .. }) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        }
    }
}
