use alloc::string::String;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("unknown coefficient family `{0}`")]
    UnknownFamily(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("coefficient {name} is not positive at x = {x} (value {value})")]
    NonPositiveCoefficient { name: &'static str, x: f64, value: f64 },

    #[error("model has no period")]
    NotPeriodic,

    #[error("step size underflow at x = {x} (h = {h:e})")]
    StepUnderflow { x: f64, h: f64 },

    #[error("step budget of {steps} exhausted at x = {x}")]
    TooManySteps { x: f64, steps: usize },

    #[error("non-finite value encountered at x = {x}")]
    NonFinite { x: f64 },

    #[error("state positions differ: {left} vs {right}")]
    PositionMismatch { left: f64, right: f64 },

    #[error("moment integral of order {order} diverges")]
    MomentDivergent { order: u8 },

    #[error("gap ({lower}, {upper}) is closed")]
    ClosedGap { lower: f64, upper: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error(
        "Neumann iteration did not converge after {iterations} iterations \
         (last delta {last_delta:e}, bound E*int|B| = {bound:e})"
    )]
    NoConvergence { iterations: usize, last_delta: f64, bound: f64 },

    #[error("solutions are numerically dependent (|W| = {0:e})")]
    DependentSolutions(f64),
}

impl Error {
    /// Whether the error reports a violated input contract rather than a
    /// numerical failure.
    pub fn is_precondition(&self) -> bool {
        matches!(
            self,
            Error::UnknownFamily(_)
                | Error::InvalidParameter(_)
                | Error::NonPositiveCoefficient { .. }
                | Error::NotPeriodic
                | Error::PositionMismatch { .. }
                | Error::MomentDivergent { .. }
                | Error::ClosedGap { .. }
                | Error::Precondition(_)
        )
    }
}
