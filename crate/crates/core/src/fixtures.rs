//! Builders for the small textbook instances and the application families
//! (binary LP, partition, assignment, maximin dispersion).

use crate::error::{ElsError, Result};
use crate::linalg::DenseMatrix;
use crate::minimax::{MinimaxProblem, Piece};
use crate::problem::{ElsProblem, LinearConstraint};

#[derive(Debug, Clone, PartialEq)]
pub enum Fixture {
    /// `min -x1 - x2` on the unit circle with `x1 <= 0`, `x2 <= 0`.
    Example41,
    /// `min X32` over `St(3,2)` with `X11 = X21 = 0`.
    Example42,
    /// `min X22 + X33` over `O(3)` with `X11 = 0`.
    Example43,
    /// `min -x1 - 2 x2` on the unit circle with `x1 <= 0`.
    Example51,
    /// Feasibility instance on `St(4,2)` with one equality `tr(A X) = 1`.
    Example52,
    /// Number partitioning as a sphere problem with `n + 1` constraints.
    Partition { a: Vec<f64> },
    /// `min a^T x` s.t. `M x <= b`, `x in {-1,1}^n`.
    BinaryLp { m: DenseMatrix, a: Vec<f64>, b: Vec<f64> },
    /// Linear sum assignment with entrywise nonnegativity on `O(n)`.
    Assignment { cost: DenseMatrix },
    /// Sphere-constrained weighted maximin dispersion, posed as min-max.
    Dispersion { w: Vec<f64>, d: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FixtureInstance {
    Els(ElsProblem),
    Minimax(MinimaxProblem),
}

impl FixtureInstance {
    pub fn into_els(self) -> Option<ElsProblem> {
        match self {
            FixtureInstance::Els(p) => Some(p),
            FixtureInstance::Minimax(_) => None,
        }
    }

    pub fn into_minimax(self) -> Option<MinimaxProblem> {
        match self {
            FixtureInstance::Minimax(m) => Some(m),
            FixtureInstance::Els(_) => None,
        }
    }
}

impl Fixture {
    pub const NAMED: [&'static str; 5] = [
        "example-4.1",
        "example-4.2",
        "example-4.3",
        "example-5.1",
        "example-5.2",
    ];

    /// Looks up a parameterless fixture by name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "example-4.1" => Ok(Fixture::Example41),
            "example-4.2" => Ok(Fixture::Example42),
            "example-4.3" => Ok(Fixture::Example43),
            "example-5.1" => Ok(Fixture::Example51),
            "example-5.2" => Ok(Fixture::Example52),
            other => Err(ElsError::UnknownFixture(other.to_string())),
        }
    }
}

/// `p x n` matrix `A` with `tr(A X) = X[row, col]`.
pub fn entry_selector(p: usize, n: usize, row: usize, col: usize) -> DenseMatrix {
    let mut a = DenseMatrix::zeros(p, n);
    a[(col, row)] = 1.0;
    a
}

fn row(values: &[f64]) -> DenseMatrix {
    DenseMatrix::from_row_slice(1, values.len(), values)
}

pub fn build_fixture(fixture: &Fixture) -> Result<FixtureInstance> {
    use LinearConstraint as C;
    let els = match fixture {
        Fixture::Example41 => ElsProblem::new(
            2,
            1,
            row(&[-1.0, -1.0]),
            vec![
                C::upper_bound(row(&[1.0, 0.0]), 0.0),
                C::upper_bound(row(&[0.0, 1.0]), 0.0),
            ],
        )?,
        Fixture::Example42 => ElsProblem::new(
            3,
            2,
            entry_selector(2, 3, 2, 1),
            vec![
                C::equality(entry_selector(2, 3, 0, 0), 0.0),
                C::equality(entry_selector(2, 3, 1, 0), 0.0),
            ],
        )?,
        Fixture::Example43 => ElsProblem::new(
            3,
            3,
            entry_selector(3, 3, 1, 1) + entry_selector(3, 3, 2, 2),
            vec![C::equality(entry_selector(3, 3, 0, 0), 0.0)],
        )?,
        Fixture::Example51 => ElsProblem::new(
            2,
            1,
            row(&[-1.0, -2.0]),
            vec![C::upper_bound(row(&[1.0, 0.0]), 0.0)],
        )?,
        Fixture::Example52 => ElsProblem::new(
            4,
            2,
            DenseMatrix::zeros(2, 4),
            vec![C::equality(
                DenseMatrix::from_row_slice(2, 4, &[1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]),
                1.0,
            )],
        )?,
        Fixture::Partition { a } => partition(a)?,
        Fixture::BinaryLp { m, a, b } => binary_lp(m, a, b)?,
        Fixture::Assignment { cost } => assignment(cost)?,
        Fixture::Dispersion { w, d } => return dispersion(w, d).map(FixtureInstance::Minimax),
    };
    Ok(FixtureInstance::Els(els))
}

/// Two feasible points of [`Fixture::Example52`]: the first violates LICQ
/// (Jacobian rank 3), the second satisfies it (rank 4).
pub fn example52_points() -> (DenseMatrix, DenseMatrix) {
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let bar = DenseMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let tilde = DenseMatrix::from_row_slice(4, 2, &[0.5, 0.0, 0.5, h, 0.0, 0.5, h, -0.5]);
    (bar, tilde)
}

fn partition(a: &[f64]) -> Result<ElsProblem> {
    let n = a.len();
    if n == 0 {
        return Err(ElsError::validation("a", "partition needs at least one number"));
    }
    let r = 1.0 / (n as f64).sqrt();
    let mut cs = vec![LinearConstraint::lower_bound(row(a), 0.0)];
    for i in 0..n {
        cs.push(LinearConstraint::new(entry_selector(1, n, i, 0), -r, r));
    }
    ElsProblem::new(n, 1, row(a), cs)
}

fn binary_lp(m: &DenseMatrix, a: &[f64], b: &[f64]) -> Result<ElsProblem> {
    let n = a.len();
    if n == 0 {
        return Err(ElsError::validation("a", "binary LP needs at least one variable"));
    }
    if m.ncols() != n || m.nrows() != b.len() {
        return Err(ElsError::validation(
            "A",
            format!(
                "expected {}x{n} constraint matrix, got {}x{}",
                b.len(),
                m.nrows(),
                m.ncols()
            ),
        ));
    }
    let scale = (n as f64).sqrt();
    let r = 1.0 / scale;
    let mut cs: Vec<LinearConstraint> = m
        .row_iter()
        .zip(b)
        .map(|(mi, &bi)| LinearConstraint::upper_bound(row(&mi.iter().copied().collect::<Vec<_>>()) * scale, bi))
        .collect();
    for i in 0..n {
        cs.push(LinearConstraint::new(entry_selector(1, n, i, 0), -r, r));
    }
    ElsProblem::new(n, 1, row(a) * scale, cs)
}

fn assignment(cost: &DenseMatrix) -> Result<ElsProblem> {
    let n = cost.nrows();
    if !cost.is_square() || n == 0 {
        return Err(ElsError::validation("A0", "assignment cost must be square"));
    }
    let mut cs = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cs.push(LinearConstraint::lower_bound(entry_selector(n, n, i, j), 0.0));
        }
    }
    ElsProblem::new(n, n, cost.clone(), cs)
}

/// `max_{|x|=1} min_i w_i |x - d_i|^2 = -min_{|x|=1} max_i (2 w_i d_i^T x - w_i (1 + |d_i|^2))`.
///
/// The returned min-max problem has the negated optimal value.
fn dispersion(w: &[f64], d: &[Vec<f64>]) -> Result<MinimaxProblem> {
    if w.is_empty() || w.len() != d.len() {
        return Err(ElsError::validation("w", "need one weight per center"));
    }
    let n = d[0].len();
    if n == 0 || d.iter().any(|di| di.len() != n) {
        return Err(ElsError::validation("d", "centers must share a positive dimension"));
    }
    if w.iter().any(|&wi| wi <= 0.0) {
        return Err(ElsError::validation("w", "weights must be positive"));
    }
    let pieces = w
        .iter()
        .zip(d)
        .map(|(&wi, di)| {
            let norm2: f64 = di.iter().map(|x| x * x).sum();
            Piece {
                a: row(di) * (2.0 * wi),
                c: -wi * (1.0 + norm2),
            }
        })
        .collect();
    MinimaxProblem::new(ElsProblem::new(n, 1, DenseMatrix::zeros(1, n), vec![])?, pieces)
}
