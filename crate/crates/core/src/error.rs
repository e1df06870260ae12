use thiserror::Error;

use crate::optimizer::RunTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("sampled level {level} exceeds the hard cap {cap}")]
    LevelOverflow { level: u64, cap: u32 },

    #[error("expected cost diverges for tau = {tau} (need tau > 1)")]
    DivergentCost { tau: f64 },

    #[error("empty support: {0}")]
    EmptySupport(&'static str),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("cannot fit decay rate: {0}")]
    CannotFit(String),

    #[error("stream path too long: depth {depth} exceeds {max}")]
    PathTooLong { depth: usize, max: usize },

    #[error("iterate diverged at iteration {iteration}")]
    Divergence {
        iteration: u64,
        trace: Box<RunTrace>,
    },
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
