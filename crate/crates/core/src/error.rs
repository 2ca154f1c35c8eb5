use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty truncation interval ({lower}, {upper})")]
    EmptyInterval { lower: f64, upper: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("non-finite sampler state at iteration {iteration}: {what}")]
    NonFinite { iteration: usize, what: String },

    #[error("unknown algorithm '{0}'")]
    UnknownAlgorithm(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures of the numerical machinery rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite(_) | Error::NonFinite { .. })
    }
}
