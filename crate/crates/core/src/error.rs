use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not symmetric positive definite: {0}")]
    NotSpd(String),
    #[error("model is not stationary (spectral radius {radius})")]
    NonStationary { radius: f64 },
    #[error("partial autocorrelation P[{stage}] has singular value {value}, not below one")]
    SingularValue { stage: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("iteration did not converge: {0}")]
    NoConvergence(String),
    #[error(transparent)]
    Sampler(#[from] varorder_nuts::SamplerError),
}

impl Error {
    /// Failures of the numerics rather than of the caller's input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::Usage(_) | Error::Dimension(_) | Error::Sampler(varorder_nuts::SamplerError::Config(_))
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
