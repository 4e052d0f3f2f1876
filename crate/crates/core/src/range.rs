//! Joint numerical range of `k` trace functionals: membership of a target in
//! the image of the unit ball `{X^T X <= I}` and recovery of a Stiefel
//! preimage.

use serde::Serialize;

use crate::cr::{CrStatus, SolverConfig};
use crate::error::{ElsError, Result};
use crate::linalg::{ensure_finite, sym_eig, DenseMatrix};
use crate::pipeline::solve_pipeline;
use crate::problem::{ElsProblem, LinearConstraint, StiefelPoint};
use crate::reduction::{InexactnessReport, ReductionOutcome};

/// Phase-I elastic value at or below which a target counts as reachable.
pub const PHASE1_FEASIBLE: f64 = 1e-9;
/// Residual bound on a unit-ball witness.
pub const WITNESS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct RangeQuery {
    n: usize,
    p: usize,
    a: Vec<DenseMatrix>,
    target: Vec<f64>,
}

impl RangeQuery {
    pub fn new(n: usize, p: usize, a: Vec<DenseMatrix>, target: Vec<f64>) -> Result<Self> {
        if n == 0 || p == 0 || p > n {
            return Err(ElsError::validation("dimensions", "requires 1 <= p <= n"));
        }
        if a.len() != target.len() {
            return Err(ElsError::validation("target", "length must equal the number of functionals"));
        }
        for (i, ai) in a.iter().enumerate() {
            if ai.shape() != (p, n) {
                return Err(ElsError::validation(format!("A[{i}]"), "expected p x n"));
            }
            ensure_finite(ai, &format!("A[{i}]"))?;
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(ElsError::validation("target", "entries must be finite"));
        }
        Ok(Self { n, p, a, target })
    }

    pub fn k(&self) -> usize {
        self.a.len()
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// Zero objective with `tr(A_i X) = a_i`.
    pub fn feasibility_problem(&self) -> Result<ElsProblem> {
        let cs = self
            .a
            .iter()
            .zip(&self.target)
            .map(|(ai, &v)| LinearConstraint::equality(ai.clone(), v))
            .collect();
        ElsProblem::new(self.n, self.p, DenseMatrix::zeros(self.p, self.n), cs)
    }

    /// Image `(tr(A_1 X), ..., tr(A_k X))`.
    pub fn image(&self, x: &DenseMatrix) -> Vec<f64> {
        self.a.iter().map(|ai| crate::linalg::trace_product(ai, x)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct G2Membership {
    pub feasible: bool,
    /// Unit-ball point hitting the target; present when feasible.
    pub witness: Option<DenseMatrix>,
    pub phase1_value: f64,
    /// Max of the target mismatch and `lambda_max(X^T X) - 1`.
    pub witness_residual: f64,
}

/// Largest violation of `X^T X <= I` and of the target equalities.
fn ball_residual(q: &RangeQuery, x: &DenseMatrix) -> Result<f64> {
    let ball = sym_eig(&(x.transpose() * x))?.eigenvalues.max() - 1.0;
    let lin = q
        .image(x)
        .iter()
        .zip(&q.target)
        .map(|(v, a)| (v - a).abs())
        .fold(0.0, f64::max);
    Ok(ball.max(0.0).max(lin))
}

pub fn membership_g2(q: &RangeQuery, cfg: &SolverConfig) -> Result<G2Membership> {
    let sol = crate::cr::solve_cr(&q.feasibility_problem()?, cfg)?;
    let residual = ball_residual(q, &sol.x)?;
    let feasible =
        sol.status == CrStatus::Optimal && sol.phase1_value <= PHASE1_FEASIBLE && residual <= WITNESS_TOL;
    Ok(G2Membership {
        feasible,
        witness: feasible.then_some(sol.x),
        phase1_value: sol.phase1_value,
        witness_residual: residual,
    })
}

#[derive(Debug, Clone)]
pub enum G1Recovery {
    Witness(StiefelPoint),
    Inexact(InexactnessReport),
}

/// Lifts the feasibility optimum and reduces it to a Stiefel point.
pub fn recover_g1(q: &RangeQuery, cfg: &SolverConfig, rank_tol: f64) -> Result<G1Recovery> {
    let prob = q.feasibility_problem()?;
    let run = solve_pipeline(&prob, cfg, rank_tol)?;
    let feasible = run.relaxation.status == CrStatus::Optimal
        && run.relaxation.phase1_value <= PHASE1_FEASIBLE
        && ball_residual(q, &run.relaxation.x)? <= WITNESS_TOL;
    if !feasible {
        return Err(ElsError::Infeasible("target is outside the unit-ball image".into()));
    }
    match (run.recovered, run.reduction) {
        (Some(pt), _) => Ok(G1Recovery::Witness(pt)),
        (None, Some(ReductionOutcome::Inexact(rep))) => Ok(G1Recovery::Inexact(rep)),
        _ => Err(ElsError::NumericalFailure("reduction produced no outcome".into())),
    }
}

/// One row of a sampled probe.
#[derive(Debug, Clone, Serialize)]
pub struct ProbeRow {
    pub target: Vec<f64>,
    pub g2_feasible: bool,
    pub g1_recovered: bool,
    /// Max of `||X^T X - I||_F` and target mismatch at the Stiefel witness,
    /// else the unit-ball residual.
    pub residual: f64,
}

pub fn probe(q: &RangeQuery, cfg: &SolverConfig, rank_tol: f64) -> Result<ProbeRow> {
    let g2 = membership_g2(q, cfg)?;
    if !g2.feasible {
        return Ok(ProbeRow {
            target: q.target.clone(),
            g2_feasible: false,
            g1_recovered: false,
            residual: g2.witness_residual,
        });
    }
    let (g1_recovered, residual) = match recover_g1(q, cfg, rank_tol)? {
        G1Recovery::Witness(pt) => (true, pt.orth_residual.max(pt.max_lin_residual())),
        G1Recovery::Inexact(_) => (false, g2.witness_residual),
    };
    Ok(ProbeRow {
        target: q.target.clone(),
        g2_feasible: true,
        g1_recovered,
        residual,
    })
}
