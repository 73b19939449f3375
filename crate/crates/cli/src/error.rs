use pacpriv_core::Error as CoreError;

/// Failure of a CLI command, carrying its process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("budget exhausted: {0}")]
    Exhausted(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Exhausted(_) => 3,
            CliError::Invariant(_) => 4,
            CliError::Io(_) | CliError::Core(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidParameter(_) | CoreError::Data(_) | CoreError::Serde(_) => {
                CliError::Config(e.to_string())
            }
            CoreError::BudgetExhausted { .. } => CliError::Exhausted(e.to_string()),
            CoreError::Invariant(msg) => CliError::Invariant(msg),
            CoreError::Io(io) => CliError::Io(io),
            other => CliError::Core(other),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
