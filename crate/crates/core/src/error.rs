use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A quantity that must be divided by is zero (e.g. `log J_k` with `J_k = 0`).
    #[error("singularity: {0}")]
    Singularity(String),

    #[error("interference is undefined for a zero-norm gradient")]
    UndefinedInterference,

    #[error("integration left the unit box by {excursion:e} at step {step}")]
    IntegrationInstability { step: usize, excursion: f64 },

    #[error("parameters diverged: norm {norm:e} at step {step}")]
    Divergence { step: usize, norm: f64 },

    #[error("exclusion windows cover the whole trajectory")]
    EmptyDomain,

    #[error("shape mismatch: {0}")]
    Shape(String),
}

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
