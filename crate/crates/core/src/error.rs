use thiserror::Error;

/// Errors raised across network construction, policy design and simulation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "geometric network with K = {nodes} and d_com = {radius} was not connected \
         after {attempts} attempts; increase the radius or the retry cap"
    )]
    NotConnected {
        nodes: usize,
        radius: f64,
        attempts: usize,
    },

    #[error("graph is not connected ({components} components)")]
    Disconnected { components: usize },

    #[error(
        "weight matrix has negative entries (min {min:e}); the state model needs a convex \
         combination of neighbor states"
    )]
    NegativeWeights { min: f64 },

    #[error("weight matrix row {row} sums to {sum} instead of 1")]
    NotStochastic { row: usize, sum: f64 },

    #[error("time index {n} outside of {lo}..={hi}")]
    TimeOutOfRange { n: usize, lo: usize, hi: usize },

    #[error("node index {node} outside of 0..{count}")]
    NodeOutOfRange { node: usize, count: usize },

    #[error("state grid does not contain the initial state 0: {0}")]
    GridMissingOrigin(String),

    #[error("LP solver failed: {0}")]
    Solver(String),

    #[error("dual ascent did not converge after {iterations} iterations (max relative violation {violation:.3e})")]
    NotConverged { iterations: usize, violation: f64 },

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error("{path}:{line}: {message}")]
    Config {
        path: String,
        line: usize,
        message: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
