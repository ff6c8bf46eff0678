use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// A constructor argument violates its documented domain.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A caller broke an operation's precondition. This signals a bug in the
    /// policy or control layer, not a modeled event.
    #[error("contract violation: {0}")]
    ContractViolation(String),

    /// A transition row does not sum to one within tolerance.
    #[error("kernel not stochastic: {0}")]
    NonStochastic(String),

    /// The instance exceeds a solver's size guard.
    #[error("instance too large: {0}")]
    InstanceTooLarge(String),

    /// An iterative solver hit its sweep cap before reaching its threshold.
    #[error("no convergence after {sweeps} sweeps (last delta {last_delta})")]
    NoConvergence { sweeps: usize, last_delta: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),

    /// An imported artifact fails validation against its own metadata.
    #[error("malformed artifact: {0}")]
    MalformedArtifact(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
