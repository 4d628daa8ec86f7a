use mzbw_core::Error as CoreError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Core { context: String, source: CoreError },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    /// Outputs were written but a check failed.
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFICATION,
            CliError::Core { source, .. } => match source {
                CoreError::NonFinite { .. }
                | CoreError::ZeroWavefunction
                | CoreError::NegativeDensity { .. }
                | CoreError::PhaseJump { .. } => EXIT_NUMERICAL,
                _ => EXIT_USAGE,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches a short description of the step that produced a core error.
pub trait Context<T> {
    fn context(self, what: &str) -> CliResult<T>;
}

impl<T> Context<T> for mzbw_core::Result<T> {
    fn context(self, what: &str) -> CliResult<T> {
        self.map_err(|source| CliError::Core { context: what.to_string(), source })
    }
}
