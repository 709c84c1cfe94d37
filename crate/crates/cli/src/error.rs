use std::path::PathBuf;

/// Failure of a command, carrying its process exit code.
#[derive(thiserror::Error, Debug)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest not found: {}", .0.display())]
    MissingManifest(PathBuf),

    #[error("checkpoint {} does not match the configured model: {detail}", .path.display())]
    CheckpointMismatch { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] mfpt_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use mfpt_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingManifest(_) => 2,
            CliError::CheckpointMismatch { .. } => 2,
            CliError::Core(E::Config(_) | E::InvalidArgument(_)) => 2,
            CliError::Core(E::NonFinite { .. }) => 4,
            CliError::Core(_) => 3,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
