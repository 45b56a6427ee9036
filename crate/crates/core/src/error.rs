use thiserror::Error;

/// Errors raised while building or running a closed loop, or while analysing it.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("enumeration budget exceeded: {needed} > {budget}")]
    Budget { needed: u128, budget: u128 },

    #[error("broadcast signal {pi} outside [0, 1]{}", .k.map(|k| format!(" at k={k}")).unwrap_or_default())]
    SignalRange { k: Option<usize>, pi: f64 },

    #[error("invalid model: {0}")]
    Validation(String),

    #[error("switching sequence exhausted at position {0}")]
    InputExhausted(usize),

    #[error("unsupported structure: {0}")]
    Unsupported(String),

    #[error("value {0} has no exact rational representation")]
    Representation(String),

    #[error("lookup failed: {0}")]
    Lookup(String),
}

pub type Result<T> = std::result::Result<T, Error>;
