//! Lifted semidefinite form: `Y = [I_n X; X^T I_p]` and the block matrices
//! `B_i` with `tr(B_i Y) = tr(A_i X)`.

use serde::Serialize;

use crate::error::{ElsError, Result};
use crate::linalg::{numeric_rank, sym_eig, DenseMatrix};
use crate::problem::ElsProblem;

/// Tolerance on the identity diagonal blocks of a lifted matrix.
const BLOCK_TOL: f64 = 1e-8;

/// `B_0, ..., B_k` for a problem.
#[derive(Debug, Clone)]
pub struct LiftedConstraintSet {
    pub b: Vec<DenseMatrix>,
    pub n: usize,
    pub p: usize,
    pub k: usize,
}

impl LiftedConstraintSet {
    /// `tr(B_i Y)`.
    pub fn trace(&self, i: usize, y: &DenseMatrix) -> f64 {
        self.b[i].component_mul(y).sum()
    }

    pub fn objective(&self, y: &DenseMatrix) -> f64 {
        self.trace(0, y)
    }
}

/// `B = 1/2 [0 A^T; A 0]` for a `p x n` matrix `A`.
pub fn block_matrix(a: &DenseMatrix) -> DenseMatrix {
    let (p, n) = a.shape();
    let mut b = DenseMatrix::zeros(n + p, n + p);
    b.view_mut((0, n), (n, p)).copy_from(&(a.transpose() * 0.5));
    b.view_mut((n, 0), (p, n)).copy_from(&(a * 0.5));
    b
}

pub fn lift_constraints(prob: &ElsProblem) -> LiftedConstraintSet {
    let b = std::iter::once(prob.a0())
        .chain(prob.constraints().iter().map(|c| &c.a))
        .map(block_matrix)
        .collect();
    LiftedConstraintSet {
        b,
        n: prob.n(),
        p: prob.p(),
        k: prob.k(),
    }
}

/// A feasible point of the lifted relaxation together with its rank.
#[derive(Debug, Clone)]
pub struct LiftedSolution {
    pub y: DenseMatrix,
    pub n: usize,
    pub p: usize,
    /// `n + numeric_rank(I_p - X^T X)`.
    pub rank: usize,
    pub rank_tol: f64,
}

impl LiftedSolution {
    /// Wraps an explicit lifted matrix, checking its block structure.
    pub fn from_matrix(y: DenseMatrix, n: usize, p: usize, rank_tol: f64) -> Result<Self> {
        if y.shape() != (n + p, n + p) {
            return Err(ElsError::InvalidInput(format!(
                "lifted matrix must be {0}x{0}",
                n + p
            )));
        }
        let asym = (&y - y.transpose()).norm();
        if asym > BLOCK_TOL * (1.0 + y.norm()) {
            return Err(ElsError::InvalidInput("lifted matrix is not symmetric".into()));
        }
        let top = (y.view((0, 0), (n, n)) - DenseMatrix::identity(n, n)).norm();
        let bottom = (y.view((n, n), (p, p)) - DenseMatrix::identity(p, p)).norm();
        if top > BLOCK_TOL || bottom > BLOCK_TOL {
            return Err(ElsError::InvalidInput(
                "diagonal blocks of the lifted matrix must be identities".into(),
            ));
        }
        let x = y.view((0, n), (n, p)).into_owned();
        let rank = n + numeric_rank(&gram_complement(&x), rank_tol)?;
        Ok(Self {
            y,
            n,
            p,
            rank,
            rank_tol,
        })
    }

    /// Off-diagonal block `Y[1:n, n+1:n+p]`.
    pub fn x(&self) -> DenseMatrix {
        self.y.view((0, self.n), (self.n, self.p)).into_owned()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(sym_eig(&self.y)?.eigenvalues[0])
    }
}

/// `I_p - X^T X`.
pub fn gram_complement(x: &DenseMatrix) -> DenseMatrix {
    let p = x.ncols();
    DenseMatrix::identity(p, p) - x.transpose() * x
}

/// `Y = [I_n X; X^T I_p]`.
pub fn lift_point(x: &DenseMatrix, rank_tol: f64) -> Result<LiftedSolution> {
    let (n, p) = x.shape();
    crate::linalg::ensure_finite(x, "X")?;
    let mut y = DenseMatrix::identity(n + p, n + p);
    y.view_mut((0, n), (n, p)).copy_from(x);
    y.view_mut((n, 0), (p, n)).copy_from(&x.transpose());
    let rank = n + numeric_rank(&gram_complement(x), rank_tol)?;
    Ok(LiftedSolution {
        y,
        n,
        p,
        rank,
        rank_tol,
    })
}

pub fn extract_x(sol: &LiftedSolution) -> DenseMatrix {
    sol.x()
}

/// Dimension tests for exactness of the relaxation and for absence of
/// local non-global minimizers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ExactnessConditions {
    /// `p(p+1)/2 <= n - k`.
    pub beck: bool,
    /// `p <= n - k`.
    pub exact: bool,
    /// `p + 1 <= n - k`.
    pub no_local_nonglobal: bool,
}

pub fn exactness_conditions(n: usize, p: usize, k: usize) -> ExactnessConditions {
    // Compare p + k against n to stay in unsigned arithmetic.
    ExactnessConditions {
        beck: p * (p + 1) / 2 + k <= n,
        exact: p + k <= n,
        no_local_nonglobal: p + 1 + k <= n,
    }
}
