use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate channel: p = r = 0 has no unique steady state")]
    DegenerateChain,

    #[error("total interface power must be positive (got {0})")]
    ZeroTotalPower(f64),

    #[error("counter update requested on absorbing counter value {0}")]
    AbsorbingState(usize),

    #[error("belief is absorbing (n = {0}); no action is defined")]
    AbsorbingBelief(usize),

    #[error("value iteration did not converge within {iterations} sweeps (last delta {last_delta:e})")]
    NotConverged { iterations: usize, last_delta: f64 },

    #[error("policy never reaches the absorbing set; expected lifetime is infinite")]
    NonAbsorbing,

    #[error("agent contract violated: {0}")]
    ContractViolation(String),

    #[error("empty trace")]
    EmptyTrace,

    #[error("trace too short for fitting: {0} samples (need at least 2)")]
    TraceTooShort(usize),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("division by zero in {0}")]
    DivisionByZero(&'static str),

    #[error("reference reward must be positive for a relative loss (got {0})")]
    NonPositiveReference(f64),
}

pub type Result<T> = std::result::Result<T, Error>;
