use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid size {0}: must be a positive multiple of 8")]
    InvalidGrid(usize),

    #[error("coefficient value {value} on element {element} is not strictly positive")]
    NonPositiveCoefficient { element: usize, value: f64 },

    #[error("linear solve failed: relative residual {achieved:e} exceeds {tolerance:e}")]
    Residual { achieved: f64, tolerance: f64 },

    #[error("factorization broke down at row {0} (matrix not positive definite)")]
    NotPositiveDefinite(usize),

    #[error("grid mismatch: {left} vs {right}")]
    GridMismatch { left: usize, right: usize },

    #[error("parameter outside the domain: {0}")]
    OutOfDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index set is not downward closed")]
    NotLower,

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("cell {cell}: {source}")]
    InCell {
        cell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn in_cell(self, cell: usize) -> Self {
        Error::InCell {
            cell,
            source: Box::new(self),
        }
    }

    /// `true` for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::Residual { .. } | Error::NotPositiveDefinite(_) | Error::Degenerate(_) => true,
            Error::InCell { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
