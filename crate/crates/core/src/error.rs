use thiserror::Error;

use crate::qp::QpError;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("labeled samples must contain both classes")]
    SingleClass,

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("schema error at line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),

    #[error("task `{0}` uses the same dataset as source and target")]
    SourceIsTarget(String),

    #[error(transparent)]
    Qp(#[from] QpError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True when the error comes from a solver that ran out of iterations or
    /// found the problem infeasible.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::Qp(QpError::NotConverged { .. })
                | Error::Qp(QpError::BoxNotConverged { .. })
                | Error::Qp(QpError::Uncertified(_))
                | Error::Qp(QpError::Infeasible)
        )
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        });
    }
    Ok(())
}
