use dflab::DfError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] DfError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    /// 2 invalid configuration or input, 3 numerical failure, 4 I/O failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) => core_code(e),
        }
    }
}

fn core_code(e: &DfError) -> u8 {
    match e {
        DfError::InvalidInput(_)
        | DfError::InsufficientData { .. }
        | DfError::SizeGuard { .. }
        | DfError::InvalidFold { .. }
        | DfError::Csv { .. } => 2,
        DfError::Io(_) => 4,
        DfError::Replicate { source, .. } => core_code(source),
        _ => 3,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
