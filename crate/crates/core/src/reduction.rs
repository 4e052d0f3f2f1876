//! Rank reduction of a lifted solution `Y` of rank `n + s` to rank `n`
//! along directions `U D U^T` that keep every `tr(B_i Y)` fixed.

use serde::Serialize;

use crate::error::{ElsError, Result};
use crate::lift::{gram_complement, LiftedConstraintSet, LiftedSolution};
use crate::linalg::{nullspace_basis, sym_eig, DenseMatrix};
use crate::problem::orth_residual;

/// Lower bound on the eigenvalues of `I - X^T X` accepted as PSD.
const PSD_TOL: f64 = 1e-8;
/// Relative threshold for the null space of the direction system.
const DIRECTION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ReductionState {
    pub y: DenseMatrix,
    pub x: DenseMatrix,
    /// `p x s` factor with `C C^T = I - X^T X` up to dropped eigenvalues.
    pub c: DenseMatrix,
    /// `[I_n 0; X^T C]`.
    pub u: DenseMatrix,
    pub s: usize,
}

#[derive(Debug, Clone)]
pub struct Direction {
    /// Symmetric, unit Frobenius norm, of order `n + s`.
    pub d: DenseMatrix,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReductionStep {
    pub rank: usize,
    pub objective: f64,
    /// `max_i |tr(B_i Y_next) - tr(B_i Y)|` over `i = 0..k`.
    pub max_drift: f64,
}

#[derive(Debug, Clone)]
pub struct Reduction {
    pub x: DenseMatrix,
    pub orth_residual: f64,
    pub lifted: LiftedSolution,
    pub initial_rank: usize,
    pub steps: Vec<ReductionStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InexactReason {
    NoDirection,
    StepLimit,
}

/// Rank reduction stopped above rank `n`; the relaxation may be inexact.
#[derive(Debug, Clone)]
pub struct InexactnessReport {
    pub reason: InexactReason,
    pub rank: usize,
    pub initial_rank: usize,
    pub steps: Vec<ReductionStep>,
    pub lifted: LiftedSolution,
}

#[derive(Debug, Clone)]
pub enum ReductionOutcome {
    Exact(Reduction),
    Inexact(InexactnessReport),
}

/// Factors `I - X^T X = C C^T` keeping eigenpairs above `rank_tol`.
pub fn factor_state(y: &LiftedSolution, rank_tol: f64) -> Result<ReductionState> {
    let (n, p) = (y.n, y.p);
    let x = y.x();
    let eig = sym_eig(&gram_complement(&x))?;
    let lo = eig.eigenvalues[0];
    if lo < -PSD_TOL {
        return Err(ElsError::InvalidInput(format!(
            "lifted matrix is not PSD: I - X^T X has eigenvalue {lo:e}"
        )));
    }
    let scale = eig.eigenvalues.amax().max(1.0);
    let kept: Vec<usize> = (0..p)
        .filter(|&j| eig.eigenvalues[j] > rank_tol * scale)
        .collect();
    let s = kept.len();
    let mut c = DenseMatrix::zeros(p, s);
    for (col, &j) in kept.iter().enumerate() {
        c.set_column(col, &(eig.eigenvectors.column(j) * eig.eigenvalues[j].sqrt()));
    }
    let mut u = DenseMatrix::zeros(n + p, n + s);
    u.view_mut((0, 0), (n, n)).fill_with_identity();
    u.view_mut((n, 0), (p, n)).copy_from(&x.transpose());
    u.view_mut((n, n), (p, s)).copy_from(&c);
    Ok(ReductionState {
        y: y.y.clone(),
        x,
        c,
        u,
        s,
    })
}

/// Symmetric basis index pairs `(a, b)` with `a <= b`.
fn sym_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|b| (0..=b).map(move |a| (a, b))).collect()
}

fn sym_from_coeffs(m: usize, pairs: &[(usize, usize)], coeffs: &[f64]) -> DenseMatrix {
    let mut d = DenseMatrix::zeros(m, m);
    for (&(a, b), &v) in pairs.iter().zip(coeffs) {
        d[(a, b)] = v;
        d[(b, a)] = v;
    }
    d
}

/// Rows of the linear system for `D`: `tr(B_i U D U^T) = 0` for `i >= 1`,
/// and the upper triangles of both diagonal blocks of `U D U^T`.
fn direction_system(state: &ReductionState, lifted: &LiftedConstraintSet) -> DenseMatrix {
    let (n, p) = (lifted.n, lifted.p);
    let m = n + state.s;
    let pairs = sym_pairs(m);
    let top = sym_pairs(n);
    let bottom = sym_pairs(p);
    let rows = lifted.k + top.len() + bottom.len();
    let mut sys = DenseMatrix::zeros(rows, pairs.len());
    for (col, &(a, b)) in pairs.iter().enumerate() {
        // U E U^T for E = E_ab + E_ba (or E_aa).
        let ua = state.u.column(a);
        let ub = state.u.column(b);
        let mut img = ua * ub.transpose();
        if a != b {
            img += ub * ua.transpose();
        }
        let mut r = 0;
        for i in 1..=lifted.k {
            sys[(r, col)] = lifted.trace(i, &img);
            r += 1;
        }
        for &(i, j) in &top {
            sys[(r, col)] = img[(i, j)];
            r += 1;
        }
        for &(i, j) in &bottom {
            sys[(r, col)] = img[(n + i, n + j)];
            r += 1;
        }
    }
    sys
}

/// A nonzero symmetric `D` in the null space of the direction system, with
/// the step `epsilon = -1 / lambda*` for the eigenvalue `lambda*` of largest
/// magnitude.
pub fn find_direction(state: &ReductionState, lifted: &LiftedConstraintSet) -> Result<Option<Direction>> {
    if state.s == 0 {
        return Ok(None);
    }
    let m = lifted.n + state.s;
    let sys = direction_system(state, lifted);
    let null = nullspace_basis(&sys, DIRECTION_TOL)?;
    if null.ncols() == 0 {
        return Ok(None);
    }
    let pairs = sym_pairs(m);
    let mut d = sym_from_coeffs(m, &pairs, null.column(0).as_slice());
    d /= d.norm();
    let eig = sym_eig(&d)?;
    let lam = eig
        .eigenvalues
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .expect("nonempty spectrum");
    Ok(Some(Direction {
        d,
        epsilon: -1.0 / lam,
    }))
}

fn traces(lifted: &LiftedConstraintSet, y: &DenseMatrix) -> Vec<f64> {
    (0..=lifted.k).map(|i| lifted.trace(i, y)).collect()
}

/// Repeats factor / direction / step until `rank(Y) = n`, at most `p` times.
pub fn reduce_to_stiefel(
    y: &LiftedSolution,
    lifted: &LiftedConstraintSet,
    rank_tol: f64,
) -> Result<ReductionOutcome> {
    if !(rank_tol > 0.0) {
        return Err(ElsError::validation("rank_tol", "must be positive"));
    }
    let (n, p) = (lifted.n, lifted.p);
    let mut current = LiftedSolution::from_matrix(y.y.clone(), n, p, rank_tol)?;
    let mut state = factor_state(&current, rank_tol)?;
    let initial_rank = n + state.s;
    let mut steps = Vec::new();
    let inexact = |reason, state: &ReductionState, steps, lifted| {
        Ok(ReductionOutcome::Inexact(InexactnessReport {
            reason,
            rank: n + state.s,
            initial_rank,
            steps,
            lifted,
        }))
    };
    while state.s > 0 {
        if steps.len() >= p {
            return inexact(InexactReason::StepLimit, &state, steps, current);
        }
        let Some(dir) = find_direction(&state, lifted)? else {
            return inexact(InexactReason::NoDirection, &state, steps, current);
        };
        let m = n + state.s;
        let inner = DenseMatrix::identity(m, m) + &dir.d * dir.epsilon;
        let mut next = &state.u * inner * state.u.transpose();
        next = (&next + next.transpose()) * 0.5;
        // The diagonal blocks are identities up to roundoff; pin them.
        next.view_mut((0, 0), (n, n)).fill_with_identity();
        next.view_mut((n, n), (p, p)).fill_with_identity();
        let before = traces(lifted, &current.y);
        let after = traces(lifted, &next);
        let max_drift = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        current = LiftedSolution::from_matrix(next, n, p, rank_tol)?;
        state = factor_state(&current, rank_tol)?;
        steps.push(ReductionStep {
            rank: n + state.s,
            objective: after[0],
            max_drift,
        });
    }
    let x = current.x();
    Ok(ReductionOutcome::Exact(Reduction {
        orth_residual: orth_residual(&x),
        x,
        lifted: current,
        initial_rank,
        steps,
    }))
}
