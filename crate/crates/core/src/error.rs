use alloc::string::String;
use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{what} #{index} at ({row}, {col}) is outside the {height}x{width} grid")]
    OutOfBounds {
        what: &'static str,
        index: usize,
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },
    #[error("dimension mismatch: expected {expected_h}x{expected_w}, found {found_h}x{found_w}")]
    DimensionMismatch {
        expected_h: usize,
        expected_w: usize,
        found_h: usize,
        found_w: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("underdetermined system: {0}")]
    Underdetermined(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("estimator error: {0}")]
    Estimator(String),
    #[error("non-finite value during training at epoch {epoch}, step {step}: {what}")]
    NonFinite {
        epoch: usize,
        step: usize,
        what: String,
    },
}

impl Error {
    /// Stable, machine-parsable class name.
    pub fn class(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidInput(_) => "invalid_input",
            Error::Parameter(_) => "parameter",
            Error::Generation(_) => "generation",
            Error::Underdetermined(_) => "underdetermined",
            Error::Numerical(_) => "numerical",
            Error::Estimator(_) => "estimator",
            Error::NonFinite { .. } => "non_finite",
        }
    }

    pub(crate) fn dims(expected: (usize, usize), found: (usize, usize)) -> Self {
        Error::DimensionMismatch {
            expected_h: expected.0,
            expected_w: expected.1,
            found_h: found.0,
            found_w: found.1,
        }
    }
}
