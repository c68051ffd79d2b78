use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum Error {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("time index {index} out of range for {num_times} time points")]
    TimeOutOfRange { index: usize, num_times: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(&'static str),
    #[error("catalogue invariant violated: {0}")]
    InvalidCatalogue(&'static str),
    #[error("non-interior parameter: {0}")]
    NonInterior(&'static str),
    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(&'static str),
    #[error("empty chain")]
    EmptyChain,
    #[error("at least two time points are required")]
    TooFewTimes,
    #[error("interior margin {margin} does not fit an axis of extent {extent}")]
    MarginTooLarge { margin: f64, extent: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
