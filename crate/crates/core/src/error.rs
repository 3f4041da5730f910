use thiserror::Error;

/// Errors raised by the estimators and their input validation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),

    #[error("bandwidth {bandwidth} leaves overlapping boundary windows on [0, {upper}] (need b < M/2)")]
    BandwidthTooLarge { bandwidth: f64, upper: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sample is empty")]
    EmptySample,

    #[error("invalid record {index}: {reason}")]
    InvalidRecord { index: usize, reason: String },

    #[error("estimated densities carry no mass")]
    ZeroMass,

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("denominator below floor at grid index {index} (value {value:e}) with positive density weight")]
    Degenerate { index: usize, value: f64 },

    #[error("model violates positivity: {0}")]
    ModelDegenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;
