use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{what} too large to materialize: {formula} = {size} exceeds limit {limit}")]
    TooLarge {
        what: &'static str,
        formula: &'static str,
        /// Decimal rendering of the size, or a lower bound when it overflows.
        size: String,
        limit: u128,
    },

    #[error("fast solver requires a shift descriptor")]
    MissingShift,

    #[error("state {state} has {draws} draws; the fast solver requires a power of two")]
    NotPowerOfTwo { state: usize, draws: String },

    #[error("inconsistent model: {0}")]
    Inconsistent(String),

    #[error("solver did not converge after {iterations} iterations (residual {residual:e})")]
    Unconverged { iterations: usize, residual: f64 },
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
