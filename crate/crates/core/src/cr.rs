//! Convex relaxation `X^T X <= I_p` of the Stiefel constraint, and the
//! closed-form solution of the unconstrained linear problem.

use nalgebra::DVector;
use serde::Serialize;

use crate::barrier::{solve_program, BallProgram, Outcome};
use crate::error::{ElsError, Result};
use crate::linalg::{thin_svd, vec_cols, unvec_cols, DenseMatrix};
use crate::problem::{orth_residual, ElsProblem, StiefelPoint};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Duality-gap tolerance, relative to `1 + |value|`.
    pub tol: f64,
    /// Newton steps allowed per centering.
    pub max_newton: usize,
    pub barrier_mu: f64,
    pub feas_tol: f64,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_newton: 200,
            barrier_mu: 5.0,
            feas_tol: 1e-9,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(ElsError::validation("tol", "must be positive"));
        }
        if !(self.feas_tol > 0.0) {
            return Err(ElsError::validation("feas_tol", "must be positive"));
        }
        if !(self.barrier_mu > 1.0) {
            return Err(ElsError::validation("barrier_mu", "must exceed 1"));
        }
        if self.max_newton == 0 {
            return Err(ElsError::validation("max_newton", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct CrSolution {
    pub x: DenseMatrix,
    /// `tr(A0 X)`.
    pub value: f64,
    pub status: CrStatus,
    pub gap_estimate: f64,
    /// Phase-I elastic value (negative when strictly feasible).
    pub phase1_value: f64,
    /// Elastic slack kept during phase II; zero unless the feasible set has
    /// no strict interior.
    pub relaxation: f64,
    pub newton_steps: usize,
}

/// Column-major coefficient vector `g` with `g . vec(X) = tr(A X)`.
pub(crate) fn trace_functional(a: &DenseMatrix) -> DVector<f64> {
    vec_cols(&a.transpose())
}

/// Appends the linear constraints of `prob` to a program whose first
/// `n * p` coordinates are `vec(X)` and whose total length is `dim`.
pub(crate) fn push_constraints(
    prob: &ElsProblem,
    dim: usize,
    ineq: &mut Vec<(DVector<f64>, f64)>,
    eq: &mut Vec<(DVector<f64>, f64)>,
) {
    let np = prob.n() * prob.p();
    for c in prob.constraints() {
        let mut g = DVector::zeros(dim);
        g.rows_mut(0, np).copy_from(&trace_functional(&c.a));
        if c.is_equality() {
            eq.push((g, c.upper));
            continue;
        }
        if c.upper.is_finite() {
            ineq.push((g.clone(), c.upper));
        }
        if c.lower.is_finite() {
            ineq.push((-g, -c.lower));
        }
    }
}

pub(crate) fn equality_system(
    eq: Vec<(DVector<f64>, f64)>,
    dim: usize,
) -> (DenseMatrix, DVector<f64>) {
    let mut a = DenseMatrix::zeros(eq.len(), dim);
    let mut b = DVector::zeros(eq.len());
    for (r, (g, h)) in eq.into_iter().enumerate() {
        a.row_mut(r).copy_from(&g.transpose());
        b[r] = h;
    }
    (a, b)
}

pub(crate) fn ball_program(prob: &ElsProblem) -> BallProgram {
    let dim = prob.n() * prob.p();
    let mut ineq = Vec::new();
    let mut eq = Vec::new();
    push_constraints(prob, dim, &mut ineq, &mut eq);
    let (eq_a, eq_b) = equality_system(eq, dim);
    BallProgram {
        n: prob.n(),
        p: prob.p(),
        cost: trace_functional(prob.a0()),
        ineq,
        eq_a,
        eq_b,
    }
}

pub(crate) fn status_of(o: Outcome) -> CrStatus {
    match o {
        Outcome::Optimal => CrStatus::Optimal,
        Outcome::Infeasible => CrStatus::Infeasible,
        Outcome::NumericalFailure => CrStatus::NumericalFailure,
    }
}

/// Solves `min tr(A0 X)` over `X^T X <= I_p` and the linear constraints.
pub fn solve_cr(prob: &ElsProblem, cfg: &SolverConfig) -> Result<CrSolution> {
    cfg.validate()?;
    let prog = ball_program(prob);
    let res = solve_program(&prog, cfg)?;
    let x = unvec_cols(res.y.as_slice(), prob.n(), prob.p());
    Ok(CrSolution {
        value: prob.objective(&x),
        x,
        status: status_of(res.outcome),
        gap_estimate: res.gap,
        phase1_value: res.phase1,
        relaxation: res.relaxation,
        newton_steps: res.newton_steps,
    })
}

/// `min tr(A0 X)` over `St(n, p)`: `X = -P Q^T` for `A0 = Q S P^T`, with
/// value `-sum(S)`.
pub fn solve_ls_svd(a0: &DenseMatrix) -> Result<(StiefelPoint, f64)> {
    let (p, n) = a0.shape();
    if p > n {
        return Err(ElsError::validation("A0", "requires p <= n"));
    }
    let svd = thin_svd(a0)?;
    let x = if svd.sigma.iter().all(|&s| s == 0.0) {
        -DenseMatrix::identity(n, p)
    } else {
        -(&svd.v * svd.u.transpose())
    };
    let value = -svd.sigma.sum();
    let point = StiefelPoint {
        orth_residual: orth_residual(&x),
        x,
        lin_residuals: Vec::new(),
    };
    Ok((point, value))
}
