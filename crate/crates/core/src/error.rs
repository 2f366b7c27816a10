use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not a valid input covariance: {0}")]
    InvalidCovariance(String),

    #[error("singular covariance: {0}")]
    Singular(String),

    #[error("state pool is empty")]
    EmptyPool,

    #[error("instance too large: {0}")]
    TooLarge(String),

    #[error("no perturbation within the rate deficit {epsilon} was found")]
    PerturbationFailed { epsilon: f64 },

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
