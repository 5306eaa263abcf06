use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or command-line arguments.
    #[error("config error: {0}")]
    Config(String),
    /// A required input file from an earlier step is absent.
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Core(#[from] tsdf_core::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingArtifact(_) => 3,
            CliError::Core(_) | CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.display().to_string(), source }
    }
}

impl From<tsdf_core::DomainError> for CliError {
    fn from(e: tsdf_core::DomainError) -> Self {
        CliError::Core(e.into())
    }
}
