use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A parameter or argument is outside the operation's domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    /// Exact resonance in a closed-form expression with a `1/(ω_e - ω_m)` pole.
    #[error("singularity: {0}")]
    Singularity(String),

    #[error("integrator failure at t = {time:e} s: {reason}")]
    Integrator { time: f64, reason: String },

    /// The motional population reached the top of the truncated Fock space.
    #[error("truncation: top Fock population {population:e} at t = {time:e} s")]
    Truncation { time: f64, population: f64 },

    #[error("fit error: {0}")]
    Fit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
