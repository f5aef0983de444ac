use thiserror::Error;

/// Errors raised by the numerical kernels and experiment drivers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("site index {index} lies outside the window [{n1}, {n2}]")]
    OutOfWindow { index: i64, n1: i64, n2: i64 },

    #[error("requested final time {requested} precedes the current time {current}")]
    BackwardsTime { requested: f64, current: f64 },

    #[error("exponential overflow in the Toda force at t = {time}; reduce dt")]
    Overflow { time: f64 },

    #[error("tridiagonal eigensolver did not converge for eigenvalue {index} after {iterations} sweeps")]
    NoConvergence { index: usize, iterations: usize },

    #[error("eigenvectors were requested by an operation but the spectrum carries none")]
    MissingEigenvectors,

    #[error("spectral density mass {mass} deviates from 1 by more than {tolerance}; the grid is too coarse")]
    Normalization { mass: f64, tolerance: f64 },

    #[error("dressing operator is numerically singular at theta = {theta}: condition estimate {condition:e}")]
    IllConditioned { theta: f64, condition: f64 },

    #[error("effective velocity is not strictly increasing near lambda = {lambda}")]
    NonMonotone { lambda: f64 },

    #[error("point {value} lies outside the spectral grid [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("negative time parameter {0} is not supported")]
    NegativeTau(f64),

    #[error("covariance clipping removed {clipped:e} of trace {trace:e}")]
    ExcessiveClipping { clipped: f64, trace: f64 },

    #[error("no quasi-particles fell in the spectral bin centred at {center} with half-width {halfwidth}")]
    EmptyBin { center: f64, halfwidth: f64 },

    #[error("observation window violated: {0}")]
    Window(String),
}

pub type Result<T> = std::result::Result<T, Error>;
