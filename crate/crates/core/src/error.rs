use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter lies outside its admissible domain.
    #[error("invalid parameter `{name}`: {reason}")]
    Domain { name: &'static str, reason: String },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("invalid density: {0}")]
    InvalidDensity(String),

    #[error("invalid lattice state: {0}")]
    InvalidState(String),

    #[error("seed site {site} is not positive at time {time}")]
    SeedNotPositive { site: i64, time: usize },

    #[error("outer path trace did not close for component starting at ({site}, {time})")]
    TraceFailed { site: i64, time: usize },

    #[error("budget exceeded: {0}")]
    BudgetExceeded(String),

    #[error("fixed-point iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("residuals do not decrease (fitted rate {rate}); configuration is not mixing")]
    NotMixing { rate: f64 },

    #[error("alpha0 at eps = 0 is {alpha0_at_zero}, not below the target {target}; no threshold exists")]
    NoThreshold { alpha0_at_zero: f64, target: f64 },

    #[error("series diverges: alpha' = {alpha_prime} >= 1/9")]
    Divergent { alpha_prime: f64 },

    #[error("insufficient signal: only {points} significant points (need {needed})")]
    InsufficientSignal { points: usize, needed: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("io: {0}")]
    Io(String),

    #[error("parse: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn domain(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Domain {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
