use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised anywhere in the reconstruction core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail} (shapes {lhs:?} vs {rhs:?})")]
    Dimension {
        op: &'static str,
        detail: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("parameter error: {0}")]
    Parameter(String),
    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },
    #[error("contract error: {0}")]
    Contract(String),
    #[error("resource error: {0}")]
    Resource(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for errors caused by numerics (NaN, divergence) rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numeric(_))
    }
}
