//! Instance data model: objective, linear constraints, point residuals and
//! the JSON problem/point file formats.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ElsError, Result};
use crate::linalg::{ensure_finite, trace_product, DenseMatrix};

/// Two-sided linear constraint `lower <= tr(A X) <= upper` with `A` of
/// shape `p x n`. Infinite bounds mean the side is absent; `lower == upper`
/// encodes an equality.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub a: DenseMatrix,
    pub lower: f64,
    pub upper: f64,
}

impl LinearConstraint {
    pub fn new(a: DenseMatrix, lower: f64, upper: f64) -> Self {
        Self { a, lower, upper }
    }

    pub fn upper_bound(a: DenseMatrix, upper: f64) -> Self {
        Self::new(a, f64::NEG_INFINITY, upper)
    }

    pub fn lower_bound(a: DenseMatrix, lower: f64) -> Self {
        Self::new(a, lower, f64::INFINITY)
    }

    pub fn equality(a: DenseMatrix, value: f64) -> Self {
        Self::new(a, value, value)
    }

    pub fn is_equality(&self) -> bool {
        self.lower == self.upper
    }

    /// `tr(A X)`.
    pub fn value(&self, x: &DenseMatrix) -> f64 {
        trace_product(&self.a, x)
    }

    /// `max(lower - v, v - upper, 0)`.
    pub fn violation(&self, x: &DenseMatrix) -> f64 {
        let v = self.value(x);
        (self.lower - v).max(v - self.upper).max(0.0)
    }
}

/// An instance of linear minimization over the Stiefel manifold with extra
/// two-sided linear constraints: `min tr(A0 X)` over `X^T X = I_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElsProblem {
    n: usize,
    p: usize,
    a0: DenseMatrix,
    constraints: Vec<LinearConstraint>,
}

impl ElsProblem {
    pub fn new(
        n: usize,
        p: usize,
        a0: DenseMatrix,
        constraints: Vec<LinearConstraint>,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(ElsError::validation("n/p", "dimensions must be positive"));
        }
        if p > n {
            return Err(ElsError::validation(
                "p",
                format!("p = {p} exceeds n = {n}"),
            ));
        }
        check_shape(&a0, p, n, "A0")?;
        for (i, c) in constraints.iter().enumerate() {
            let field = format!("constraints[{i}]");
            check_shape(&c.a, p, n, &format!("{field}.A"))?;
            if c.lower.is_nan() || c.upper.is_nan() {
                return Err(ElsError::validation(field, "bounds must not be NaN"));
            }
            if c.lower == f64::INFINITY {
                return Err(ElsError::validation(format!("{field}.lower"), "lower bound is +inf"));
            }
            if c.upper == f64::NEG_INFINITY {
                return Err(ElsError::validation(format!("{field}.upper"), "upper bound is -inf"));
            }
            if c.lower > c.upper {
                return Err(ElsError::validation(
                    field,
                    format!("lower {} exceeds upper {}", c.lower, c.upper),
                ));
            }
        }
        Ok(Self {
            n,
            p,
            a0,
            constraints,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.constraints.len()
    }

    pub fn a0(&self) -> &DenseMatrix {
        &self.a0
    }

    pub fn constraints(&self) -> &[LinearConstraint] {
        &self.constraints
    }

    pub fn objective(&self, x: &DenseMatrix) -> f64 {
        trace_product(&self.a0, x)
    }

    /// Same constraints, objective replaced.
    pub fn with_objective(&self, a0: DenseMatrix) -> Result<Self> {
        Self::new(self.n, self.p, a0, self.constraints.clone())
    }

    /// Same objective, one more constraint.
    pub fn with_constraint(&self, c: LinearConstraint) -> Result<Self> {
        let mut cs = self.constraints.clone();
        cs.push(c);
        Self::new(self.n, self.p, self.a0.clone(), cs)
    }
}

fn check_shape(a: &DenseMatrix, rows: usize, cols: usize, field: &str) -> Result<()> {
    if a.shape() != (rows, cols) {
        return Err(ElsError::validation(
            field,
            format!(
                "expected {rows}x{cols}, got {}x{}",
                a.nrows(),
                a.ncols()
            ),
        ));
    }
    ensure_finite(a, field).map_err(|_| ElsError::validation(field, "non-finite entry"))
}

/// A candidate point with its feasibility residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct StiefelPoint {
    pub x: DenseMatrix,
    /// `||X^T X - I_p||_F`.
    pub orth_residual: f64,
    /// Per-constraint violation `max(lower - v, v - upper, 0)`.
    pub lin_residuals: Vec<f64>,
}

impl StiefelPoint {
    pub fn feasible(&self, tol: f64) -> bool {
        self.orth_residual <= tol && self.lin_residuals.iter().all(|&r| r <= tol)
    }

    pub fn max_lin_residual(&self) -> f64 {
        self.lin_residuals.iter().copied().fold(0.0, f64::max)
    }
}

pub fn orth_residual(x: &DenseMatrix) -> f64 {
    let p = x.ncols();
    (x.transpose() * x - DenseMatrix::identity(p, p)).norm()
}

/// Feasibility residuals of `x` for `prob`.
pub fn residuals(prob: &ElsProblem, x: &DenseMatrix) -> Result<StiefelPoint> {
    if x.shape() != (prob.n, prob.p) {
        return Err(ElsError::validation(
            "X",
            format!(
                "expected {}x{}, got {}x{}",
                prob.n,
                prob.p,
                x.nrows(),
                x.ncols()
            ),
        ));
    }
    ensure_finite(x, "X").map_err(|_| ElsError::validation("X", "non-finite entry"))?;
    Ok(StiefelPoint {
        x: x.clone(),
        orth_residual: orth_residual(x),
        lin_residuals: prob.constraints.iter().map(|c| c.violation(x)).collect(),
    })
}

// ---------------------------------------------------------------------------
// File formats

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub(crate) enum RawBound {
    Num(f64),
    Token(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RawConstraint {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub lower: RawBound,
    pub upper: RawBound,
}

#[derive(Debug, Clone, Deserialize)]
struct RawProblem {
    n: usize,
    p: usize,
    #[serde(rename = "A0")]
    a0: Vec<Vec<f64>>,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
}

pub(crate) fn parse_error(e: serde_json::Error) -> ElsError {
    ElsError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Builds a matrix from JSON rows, checking the row lengths.
pub(crate) fn matrix_from_rows(rows: &[Vec<f64>], field: &str) -> Result<DenseMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|row| row.len() != c) {
        return Err(ElsError::validation(
            format!("{field}[{i}]"),
            format!("row has {} entries, expected {c}", rows[i].len()),
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DenseMatrix::from_row_slice(r, c, &flat))
}

pub(crate) fn bound_from_raw(b: &RawBound, upper: bool, field: &str) -> Result<f64> {
    match b {
        RawBound::Num(v) => Ok(*v),
        RawBound::Token(t) if upper && t == "inf" => Ok(f64::INFINITY),
        RawBound::Token(t) if !upper && t == "-inf" => Ok(f64::NEG_INFINITY),
        RawBound::Token(t) => Err(ElsError::validation(
            field,
            format!(
                "unexpected token `{t}` (expected a number or \"{}\")",
                if upper { "inf" } else { "-inf" }
            ),
        )),
    }
}

pub(crate) fn constraints_from_raw(raw: &[RawConstraint]) -> Result<Vec<LinearConstraint>> {
    raw.iter()
        .enumerate()
        .map(|(i, c)| {
            let field = format!("constraints[{i}]");
            Ok(LinearConstraint {
                a: matrix_from_rows(&c.a, &format!("{field}.A"))?,
                lower: bound_from_raw(&c.lower, false, &format!("{field}.lower"))?,
                upper: bound_from_raw(&c.upper, true, &format!("{field}.upper"))?,
            })
        })
        .collect()
}

/// Parses and validates a problem file.
pub fn parse_problem(text: &str) -> Result<ElsProblem> {
    let raw: RawProblem = serde_json::from_str(text).map_err(parse_error)?;
    let a0 = matrix_from_rows(&raw.a0, "A0")?;
    let constraints = constraints_from_raw(&raw.constraints)?;
    ElsProblem::new(raw.n, raw.p, a0, constraints)
}

pub(crate) fn fmt_real(x: f64) -> String {
    if x == f64::INFINITY {
        "\"inf\"".into()
    } else if x == f64::NEG_INFINITY {
        "\"-inf\"".into()
    } else {
        serde_json::to_string(&x).expect("finite float serializes")
    }
}

pub(crate) fn fmt_matrix(a: &DenseMatrix) -> String {
    let rows: Vec<String> = a
        .row_iter()
        .map(|r| {
            let cells: Vec<String> = r.iter().map(|&x| fmt_real(x)).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}

pub(crate) fn write_constraints(out: &mut String, cs: &[LinearConstraint]) {
    if cs.is_empty() {
        out.push_str("  \"constraints\": []");
        return;
    }
    out.push_str("  \"constraints\": [\n");
    for (i, c) in cs.iter().enumerate() {
        let sep = if i + 1 == cs.len() { "" } else { "," };
        let _ = writeln!(
            out,
            "    {{\"A\": {}, \"lower\": {}, \"upper\": {}}}{sep}",
            fmt_matrix(&c.a),
            fmt_real(c.lower),
            fmt_real(c.upper)
        );
    }
    out.push_str("  ]");
}

/// Canonical text form: fixed key order, one constraint per line, reals in
/// shortest round-trip decimal.
pub fn serialize_problem(prob: &ElsProblem) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{{\n  \"n\": {},\n  \"p\": {},", prob.n, prob.p);
    let _ = writeln!(out, "  \"A0\": {},", fmt_matrix(&prob.a0));
    write_constraints(&mut out, &prob.constraints);
    out.push_str("\n}\n");
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawPoint {
    #[serde(rename = "X")]
    x: Vec<Vec<f64>>,
}

/// Parses a point file `{"X": [[...n rows of p reals...]]}`.
pub fn parse_point(text: &str) -> Result<DenseMatrix> {
    let raw: RawPoint = serde_json::from_str(text).map_err(parse_error)?;
    let x = matrix_from_rows(&raw.x, "X")?;
    ensure_finite(&x, "X").map_err(|_| ElsError::validation("X", "non-finite entry"))?;
    Ok(x)
}

pub fn serialize_point(x: &DenseMatrix) -> String {
    format!("{{\"X\": {}}}\n", fmt_matrix(x))
}

/// Row-major nested vectors, as used in JSON reports.
pub fn matrix_rows(a: &DenseMatrix) -> Vec<Vec<f64>> {
    a.row_iter().map(|r| r.iter().copied().collect()).collect()
}
