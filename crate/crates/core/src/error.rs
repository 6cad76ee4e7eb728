use thiserror::Error;

/// Errors raised by the in-memory model, renderer, gradients and fitter.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite parameter in gaussian {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular covariance in gaussian {0}")]
    SingularCovariance(usize),
    #[error("batch mixes image dimensions")]
    MixedDimensions,
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
