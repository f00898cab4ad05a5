use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration or overrides.
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] raylab_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// Short machine-readable category for the error log.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Core(_) => "numeric",
            CliError::Io(_) => "io",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }
}
