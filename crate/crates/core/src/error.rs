use thiserror::Error;

/// Errors raised by the numerical routines in this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("loss is not twice differentiable: {count} knot/design-point coincidences (first: neuron {neuron}, point {point})")]
    NonDifferentiable { count: usize, neuron: usize, point: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("width {k} is smaller than the number of design points {n}")]
    WidthTooSmall { k: usize, n: usize },

    #[error("no design points inside the interval")]
    EmptyInterval,

    #[error("uncertain set is empty at gamma = {gamma}")]
    EmptyUncertainSet { gamma: f64 },

    #[error("region is empty")]
    EmptyRegion,

    #[error("power iteration did not converge after {iters} iterations (best estimate {estimate})")]
    NotConverged { estimate: f64, iters: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(String),
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
