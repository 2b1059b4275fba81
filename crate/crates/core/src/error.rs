use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("moment of order {order} diverges for this radius law")]
    MomentDivergence { order: f64 },

    #[error("epsilon {epsilon} too large for this realization: {detail}")]
    EpsilonTooLarge { epsilon: f64, detail: String },

    #[error("degenerate extension cell for index {index}: volume {volume:.3e} <= 3 stderr ({stderr:.3e})")]
    DegenerateCell { index: usize, volume: f64, stderr: f64 },

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("infeasible divergence data on fluid component {component}: net source {net:.3e}")]
    Infeasible { component: usize, net: f64 },

    #[error("incompatible annulus data: relative flux mismatch {mismatch:.3e}")]
    Compatibility { mismatch: f64 },

    #[error("unsupported dimension {0}")]
    UnsupportedDimension(usize),

    #[error("{0}")]
    Numeric(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
