use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not positive definite at point {index:?}")]
    NotPositiveDefinite { index: Option<usize> },

    #[error("non-finite kernel value between points {row} and {col}")]
    NonFinite { row: usize, col: usize },

    #[error("zero {what} sum at point {index} (isolated point)")]
    ZeroSum { what: &'static str, index: usize },

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("complex eigenvalue {re} + {im}i")]
    ComplexEigenvalue { re: f64, im: f64 },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures of the numerical core rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NoConvergence(_)
                | Error::RankDeficient(_)
                | Error::ComplexEigenvalue { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::NonFinite { .. }
                | Error::ZeroSum { .. }
        )
    }
}
