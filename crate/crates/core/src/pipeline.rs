//! Relaxation, lifting and rank reduction chained end to end.

use crate::cr::{solve_cr, CrSolution, CrStatus, SolverConfig};
use crate::error::Result;
use crate::lift::{lift_constraints, lift_point};
use crate::problem::{residuals, ElsProblem, StiefelPoint};
use crate::reduction::{reduce_to_stiefel, ReductionOutcome};

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub relaxation: CrSolution,
    /// Absent unless the relaxation solved to optimality.
    pub reduction: Option<ReductionOutcome>,
    /// Stiefel point from an exact reduction, with its residuals.
    pub recovered: Option<StiefelPoint>,
}

impl PipelineRun {
    /// Objective at the recovered point, if any.
    pub fn recovered_value(&self, prob: &ElsProblem) -> Option<f64> {
        self.recovered.as_ref().map(|pt| prob.objective(&pt.x))
    }
}

/// `solve_cr`, then `lift_point` and `reduce_to_stiefel` on the optimum.
pub fn solve_pipeline(prob: &ElsProblem, cfg: &SolverConfig, rank_tol: f64) -> Result<PipelineRun> {
    let relaxation = solve_cr(prob, cfg)?;
    let (reduction, recovered) = reduce_relaxation(prob, &relaxation, rank_tol)?;
    Ok(PipelineRun {
        relaxation,
        reduction,
        recovered,
    })
}

/// Rank reduction from a relaxation optimum; nothing to do unless the
/// relaxation solved to optimality.
pub fn reduce_relaxation(
    prob: &ElsProblem,
    relaxation: &CrSolution,
    rank_tol: f64,
) -> Result<(Option<ReductionOutcome>, Option<StiefelPoint>)> {
    if relaxation.status != CrStatus::Optimal {
        return Ok((None, None));
    }
    let lifted = lift_point(&relaxation.x, rank_tol)?;
    let outcome = reduce_to_stiefel(&lifted, &lift_constraints(prob), rank_tol)?;
    let recovered = match &outcome {
        ReductionOutcome::Exact(r) => Some(residuals(prob, &r.x)?),
        ReductionOutcome::Inexact(_) => None,
    };
    Ok((Some(outcome), recovered))
}
