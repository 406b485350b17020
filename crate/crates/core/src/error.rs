use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("newick parse error at offset {offset}: {message}")]
    Newick { offset: usize, message: String },

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("tip labels do not match: {0}")]
    LabelMismatch(String),

    #[error("optimum variance is degenerate ({variance:e}) at t = {time}")]
    DegenerateOptimumVariance { time: f64, variance: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("design matrix is rank deficient (rank {rank} < {columns})")]
    RankDeficient { rank: usize, columns: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("no starting point converged: {0}")]
    NoConvergence(String),
}

impl Error {
    /// True for failures caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateOptimumVariance { .. }
                | Error::NotPositiveDefinite(_)
                | Error::RankDeficient { .. }
                | Error::NonFinite(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
