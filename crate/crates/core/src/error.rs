//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("activation universe must contain at least one member")]
    EmptyUniverse,

    #[error("activation vector has no active node")]
    EmptyActivation,

    #[error("random_subsets size must be in 1..=n, got size {size} for n = {n}")]
    InvalidSubsetSize { size: usize, n: usize },

    #[error("node id {id} outside 1..={n}")]
    InvalidNodeId { id: usize, n: usize },

    #[error("function domain violated: {0}")]
    DomainViolation(String),

    #[error("transition row {row} is not a probability distribution (sum = {sum})")]
    NonStochasticRow { row: usize, sum: f64 },

    #[error("transition matrix is reducible; the activation chain must be irreducible")]
    ReducibleChain,

    #[error("stationary distribution did not converge within the iteration cap")]
    StationaryDivergence,

    #[error(
        "exact expectation over {active} stochastic perturbations exceeds the enumeration \
         limit of {max}; use a Monte Carlo estimate instead"
    )]
    EnumerationTooLarge { active: usize, max: usize },

    #[error("system is underdetermined: {0}")]
    Underdetermined(String),

    #[error("corruption budget q = {q} outside 0..={rows} nonzero rows")]
    InvalidQ { q: usize, rows: usize },

    #[error("step schedule must satisfy 0.5 < beta < alpha <= 1 (alpha = {alpha}, beta = {beta})")]
    InvalidSchedule { alpha: f64, beta: f64 },

    #[error("activation vector is not a member of the universe")]
    UnknownActivation,

    #[error("no rounds to average")]
    EmptyRounds,

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("config hash mismatch in {file}: expected {expected}, found {found}")]
    HashMismatch {
        file: String,
        expected: String,
        found: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors that stem from an invalid configuration rather than a runtime
    /// failure. The CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
