use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("timestep {t} outside 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("numeric degeneracy: alpha_bar = {alpha_bar:e} is too small to invert")]
    Degenerate { alpha_bar: f64 },

    #[error("need {needed} neighbours but only {available} are available")]
    InsufficientNeighbors { needed: usize, available: usize },

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("training diverged at step {step}: loss is not finite")]
    TrainingDiverged { step: usize },
}

impl Error {
    /// True for failures caused by degenerate numerics rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Degenerate { .. } | Error::TrainingDiverged { .. })
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
