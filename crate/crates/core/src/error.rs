use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature did not reach tolerance {tol:e} (estimate {estimate:e}) in {context}")]
    Tolerance {
        context: String,
        tol: f64,
        estimate: f64,
    },
    #[error("matrix is not positive semi-definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
    #[error("{family} volatility does not support {what}")]
    Unsupported { family: &'static str, what: String },
    #[error("budget exceeded: {0}")]
    Budget(String),
    #[error("dimension {dim} exceeds the limit {max} for {what}")]
    Dimension {
        what: &'static str,
        dim: usize,
        max: usize,
    },
    #[error("argument {0} is too close to a pole of the Beta function")]
    Pole(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
