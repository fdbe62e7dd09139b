use thiserror::Error;

/// Errors raised by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("noise uncertainty must exceed 1 (got {0}); the detection error is undefined")]
    DegenerateUncertainty(f64),

    #[error("MMSE weight denominator for user {user} is not positive ({value:e})")]
    NonPositiveWeight { user: usize, value: f64 },

    #[error("covertness projection stayed above the budget after {0} corrections")]
    ProjectionFailed(usize),

    #[error("antenna anchor coincides with another antenna at ({x}, {y})")]
    CoincidentAntennas { x: f64, y: f64 },

    #[error("could not place {count} antennas {spacing} m apart in a {region} m region after {attempts} attempts")]
    Packing {
        count: usize,
        spacing: f64,
        region: f64,
        attempts: usize,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("record format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
