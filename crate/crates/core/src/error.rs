use thiserror::Error;

use crate::model::LinearRewardModel;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    /// Training produced a non-finite loss. Carries the last iterate whose loss was finite.
    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged {
        epoch: usize,
        last_finite: LinearRewardModel,
    },

    #[error(
        "m = {m} exceeds the enumeration guard ({guard}); exact decomposition enumerates all m! \
         rankings and no polynomial-time algorithm is known for deciding realizability"
    )]
    TooLarge { m: usize, guard: usize },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, found })
        }
    }
}
