//! Dense linear-algebra kernel.
//!
//! Matrices are `nalgebra` values; the SVD and symmetric eigensolver run on
//! `faer`, whose routines stay accurate on clustered spectra. The wrappers add
//! input validation, sorted spectra, fixed sign conventions and relative rank
//! thresholds. Every other module goes through these helpers so that rank
//! decisions are made in exactly one place.

use faer::{Mat, MatRef, Side};
use nalgebra::{DMatrix, DVector};

use crate::error::{ElsError, Result};

/// Dense real matrix used throughout the crate.
pub type DenseMatrix = DMatrix<f64>;

/// Default relative threshold for rank and null-space decisions.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Entries below this magnitude are skipped when fixing vector signs.
const SIGN_EPS: f64 = 1e-12;

/// Thin singular value decomposition `A = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: DenseMatrix,
    /// Singular values, sorted in decreasing order.
    pub sigma: DVector<f64>,
    pub v: DenseMatrix,
}

/// Symmetric eigendecomposition `A = Q diag(eigenvalues) Q^T`.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Eigenvalues, sorted in increasing order.
    pub eigenvalues: DVector<f64>,
    /// Orthogonal matrix whose columns pair with `eigenvalues`.
    pub eigenvectors: DenseMatrix,
}

pub fn ensure_finite(a: &DenseMatrix, what: &str) -> Result<()> {
    if a.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ElsError::InvalidInput(format!("{what} contains non-finite entries")))
    }
}

/// Flip `col` so that its first entry of non-negligible magnitude is
/// non-negative. Returns whether a flip happened.
fn canonical_sign(col: &mut nalgebra::DVectorViewMut<'_, f64>) -> bool {
    let lead = col.iter().copied().find(|x| x.abs() > SIGN_EPS);
    if matches!(lead, Some(x) if x < 0.0) {
        col.neg_mut();
        true
    } else {
        false
    }
}

fn canonical_columns(m: &mut DenseMatrix) {
    for j in 0..m.ncols() {
        canonical_sign(&mut m.column_mut(j));
    }
}

fn to_faer(a: &DenseMatrix) -> Mat<f64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(a: MatRef<'_, f64>) -> DenseMatrix {
    DenseMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

/// Thin SVD with singular values sorted in decreasing order.
///
/// For an `m x n` input with `r = min(m, n)`, `U` is `m x r` and `V` is
/// `n x r`. Each left singular vector has its first non-negligible entry
/// non-negative and its right partner is flipped with it.
pub fn thin_svd(a: &DenseMatrix) -> Result<ThinSvd> {
    ensure_finite(a, "matrix")?;
    let (m, n) = a.shape();
    let r = m.min(n);
    if r == 0 {
        return Ok(ThinSvd {
            u: DenseMatrix::zeros(m, 0),
            sigma: DVector::zeros(0),
            v: DenseMatrix::zeros(n, 0),
        });
    }
    let svd = to_faer(a)
        .thin_svd()
        .map_err(|e| ElsError::NumericalFailure(format!("SVD failed: {e:?}")))?;
    let mut u = from_faer(svd.U());
    let mut v = from_faer(svd.V());
    let s = svd.S().column_vector();
    let sigma = DVector::from_fn(r, |j, _| s[j].max(0.0));
    for j in 0..r {
        if canonical_sign(&mut u.column_mut(j)) {
            v.column_mut(j).neg_mut();
        }
    }
    Ok(ThinSvd { u, sigma, v })
}

/// Singular values only, decreasing.
pub fn singular_values(a: &DenseMatrix) -> Result<DVector<f64>> {
    ensure_finite(a, "matrix")?;
    if a.nrows() == 0 || a.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(thin_svd(a)?.sigma)
}

/// Eigendecomposition of a symmetric matrix. The input is symmetrized as
/// `(A + A^T) / 2` before factorization.
pub fn sym_eig(a: &DenseMatrix) -> Result<SymEig> {
    if !a.is_square() {
        return Err(ElsError::InvalidInput(format!(
            "sym_eig needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    ensure_finite(a, "matrix")?;
    let n = a.nrows();
    if n == 0 {
        return Ok(SymEig {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DenseMatrix::zeros(0, 0),
        });
    }
    let sym = symmetrize(a);
    let eig = to_faer(&sym)
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| ElsError::NumericalFailure(format!("symmetric eigensolver failed: {e:?}")))?;
    let s = eig.S().column_vector();
    let vals = DVector::from_fn(n, |j, _| s[j]);
    let mut vecs = from_faer(eig.U());
    canonical_columns(&mut vecs);
    Ok(SymEig {
        eigenvalues: vals,
        eigenvectors: vecs,
    })
}

pub fn symmetrize(a: &DenseMatrix) -> DenseMatrix {
    (a + a.transpose()) * 0.5
}

fn rank_threshold(sigma_max: f64, tol: f64) -> f64 {
    tol * sigma_max.max(1.0)
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(ElsError::InvalidInput(format!("tolerance must be positive, got {tol}")))
    }
}

/// Number of singular values strictly above `tol * max(1, sigma_max)`.
pub fn numeric_rank(a: &DenseMatrix, tol: f64) -> Result<usize> {
    check_tol(tol)?;
    let s = singular_values(a)?;
    if s.is_empty() {
        return Ok(0);
    }
    let thr = rank_threshold(s[0], tol);
    Ok(s.iter().filter(|&&x| x > thr).count())
}

/// Orthonormal basis (as columns) of the numerical null space of `a`.
///
/// The column count is always `cols(a) - numeric_rank(a, tol)`.
pub fn nullspace_basis(a: &DenseMatrix, tol: f64) -> Result<DenseMatrix> {
    check_tol(tol)?;
    ensure_finite(a, "matrix")?;
    let (m, n) = a.shape();
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, 0));
    }
    if m == 0 {
        return Ok(DenseMatrix::identity(n, n));
    }
    // Pad short matrices with zero rows so that V is square.
    let work = if m < n {
        let mut padded = DenseMatrix::zeros(n, n);
        padded.view_mut((0, 0), (m, n)).copy_from(a);
        padded
    } else {
        a.clone()
    };
    let svd = thin_svd(&work)?;
    let thr = rank_threshold(svd.sigma[0], tol);
    // Smallest singular value first.
    let null_idx: Vec<usize> = (0..n).rev().filter(|&j| svd.sigma[j] <= thr).collect();
    let mut z = DenseMatrix::zeros(n, null_idx.len());
    for (dst, &src) in null_idx.iter().enumerate() {
        z.set_column(dst, &svd.v.column(src));
    }
    canonical_columns(&mut z);
    Ok(z)
}

/// Minimum-norm least-squares solution of `a x = b`, truncating singular
/// values at the same relative threshold as [`numeric_rank`].
pub fn min_norm_solve(a: &DenseMatrix, b: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    check_tol(tol)?;
    let n = a.ncols();
    if a.nrows() == 0 || n == 0 {
        return Ok(DVector::zeros(n));
    }
    let svd = thin_svd(a)?;
    let thr = rank_threshold(svd.sigma[0], tol);
    let mut x = DVector::zeros(n);
    for j in 0..svd.sigma.len() {
        let s = svd.sigma[j];
        if s > thr {
            let coef = svd.u.column(j).dot(b) / s;
            x.axpy(coef, &svd.v.column(j), 1.0);
        }
    }
    Ok(x)
}

/// Orthonormal `Q` factor of a thin QR decomposition with the diagonal of
/// `R` made non-negative, so the map is a well-defined retraction.
pub fn qf(a: &DenseMatrix) -> DenseMatrix {
    let qr = a.clone().qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..q.ncols().min(r.nrows()) {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Column-stacking vectorization.
pub fn vec_cols(a: &DenseMatrix) -> DVector<f64> {
    DVector::from_column_slice(a.as_slice())
}

/// Inverse of [`vec_cols`].
pub fn unvec_cols(v: &[f64], rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_column_slice(rows, cols, v)
}

/// `tr(A X)` without forming the product.
pub fn trace_product(a: &DenseMatrix, x: &DenseMatrix) -> f64 {
    debug_assert_eq!(a.ncols(), x.nrows());
    debug_assert_eq!(a.nrows(), x.ncols());
    a.transpose().component_mul(x).sum()
}
