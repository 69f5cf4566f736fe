use thiserror::Error;

/// Errors raised across the solver.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("improper function: every sample is +inf")]
    ImproperFunction,
    #[error("function is unbounded below (tail slope {slope} points the wrong way)")]
    UnboundedBelow { slope: f64 },
    #[error("point {point} lies outside the closure of the effective domain")]
    OutsideDomain { point: f64 },
    #[error("slope {slope} is outside the attainable range [{lo}, {hi}]")]
    SlopeOutOfRange { slope: f64, lo: f64, hi: f64 },
    #[error("profile is not non-decreasing at index {index}")]
    NonMonotone { index: usize },
    #[error("payoff value {value} is negative")]
    NegativePayoff { value: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported dimension {dim}: grid solvers handle d = 1 only")]
    UnsupportedDimension { dim: usize },
    #[error("finite-difference scheme became unstable at t = {time} (value {value})")]
    Instability { time: f64, value: f64 },
    #[error("invariant `{check}` violated at t = {time}, x index {x_index}, axis index {axis_index}: {detail}")]
    InvariantViolation {
        check: String,
        time: f64,
        x_index: usize,
        axis_index: usize,
        detail: String,
    },
    #[error("time {0} is not a stored slice time")]
    UnknownTime(f64),
    #[error("root not bracketed: {0}")]
    RootNotBracketed(String),
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
