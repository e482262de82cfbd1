//! Error type shared by all modules of the crate.

use thiserror::Error;

/// Errors produced by construction, assembly, factorization and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least two points")]
    NeedTwoPoints,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate points at indices {0} and {1}")]
    DuplicatePoint(usize, usize),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("point set not unisolvent for P")]
    NotUnisolvent,

    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    #[error("matrix not SPD (pivot <= 0 at cluster {cluster}, index range {start}..{end})")]
    NotSpd {
        cluster: usize,
        start: usize,
        end: usize,
    },

    #[error("SVD did not converge on block ({row}, {col})")]
    SvdFailed { row: usize, col: usize },

    #[error("missing blockwise norm for block ({row}, {col})")]
    MissingBlockNorm { row: usize, col: usize },

    #[error("c not in C; energy identity invalid")]
    ConstraintViolated,

    #[error("fewer than 3 usable points for decay fit")]
    TooFewFitPoints,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed input or violated preconditions,
    /// as opposed to numerical failures encountered during a computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NeedTwoPoints
                | Error::InvalidInput(_)
                | Error::DuplicatePoint(..)
                | Error::DimMismatch { .. }
                | Error::MissingBlockNorm { .. }
                | Error::Parse(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
