//! Heuristic reference designs: zero-forcing with power allocation,
//! round-robin user scheduling, and time switching between dedicated
//! sensing, communication and powering phases.

pub mod round_robin;
pub mod time_switch;
pub mod zf;

use crate::conic::{SolveResult, SolveStatus};
use crate::{Error, Result};

/// Maps a solve outcome to the crate error for a one-shot convex design.
pub(crate) fn require_optimal(res: &SolveResult, what: &str) -> Result<()> {
    match res.status {
        SolveStatus::Optimal => Ok(()),
        SolveStatus::Infeasible => Err(Error::RequirementsInfeasible(format!("{what} is infeasible"))),
        SolveStatus::NumericalFailure => Err(Error::NumericalFailure(format!("{what}: {}", res.detail))),
    }
}
