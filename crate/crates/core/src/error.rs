use thiserror::Error;

use crate::joint_optimizer::IterationTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("cannot normalize: {0}")]
    Normalization(String),

    #[error("degenerate channel: {0}")]
    DegenerateChannel(String),

    #[error("requirements infeasible: {0}")]
    RequirementsInfeasible(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("estimation degenerate: {0}")]
    EstimationDegenerate(String),

    /// The iterative optimizer stopped on a failed subproblem; the trace up to
    /// the failure is kept.
    #[error("optimizer stopped after {} solves: {source}", trace.solves())]
    Optimizer {
        #[source]
        source: Box<Error>,
        trace: IterationTrace,
    },
}

impl Error {
    /// True for the requirements-infeasible outcome, including when it is
    /// wrapped by the optimizer.
    pub fn is_infeasible(&self) -> bool {
        match self {
            Error::RequirementsInfeasible(_) => true,
            Error::Optimizer { source, .. } => source.is_infeasible(),
            _ => false,
        }
    }

    pub fn is_numerical_failure(&self) -> bool {
        match self {
            Error::NumericalFailure(_) => true,
            Error::Optimizer { source, .. } => source.is_numerical_failure(),
            _ => false,
        }
    }
}
