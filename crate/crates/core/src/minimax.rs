//! Min-max of affine pieces over the Stiefel manifold:
//! `min_X max_i tr(A_i X) + c_i` subject to the base linear constraints.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::{solve_program, BallProgram};
use crate::cr::{equality_system, push_constraints, status_of, trace_functional, CrStatus, SolverConfig};
use crate::error::{ElsError, Result};
use crate::linalg::{trace_product, unvec_cols, DenseMatrix};
use crate::pipeline::solve_pipeline;
use crate::problem::{
    constraints_from_raw, fmt_matrix, fmt_real, matrix_from_rows, parse_error, write_constraints,
    ElsProblem, RawConstraint,
};

/// One affine piece `tr(A X) + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Piece {
    pub a: DenseMatrix,
    pub c: f64,
}

impl Piece {
    pub fn value(&self, x: &DenseMatrix) -> f64 {
        trace_product(&self.a, x) + self.c
    }
}

/// Base constraints plus `m >= 1` pieces. The objective of `base` is unused.
#[derive(Debug, Clone, PartialEq)]
pub struct MinimaxProblem {
    base: ElsProblem,
    pieces: Vec<Piece>,
}

impl MinimaxProblem {
    pub fn new(base: ElsProblem, pieces: Vec<Piece>) -> Result<Self> {
        if pieces.is_empty() {
            return Err(ElsError::validation("pieces", "need at least one piece"));
        }
        for (i, piece) in pieces.iter().enumerate() {
            if piece.a.shape() != (base.p(), base.n()) {
                return Err(ElsError::validation(
                    format!("pieces[{i}].A"),
                    format!(
                        "expected {}x{}, got {}x{}",
                        base.p(),
                        base.n(),
                        piece.a.nrows(),
                        piece.a.ncols()
                    ),
                ));
            }
            if piece.a.iter().any(|v| !v.is_finite()) || !piece.c.is_finite() {
                return Err(ElsError::validation(format!("pieces[{i}]"), "non-finite entry"));
            }
        }
        Ok(Self { base, pieces })
    }

    pub fn base(&self) -> &ElsProblem {
        &self.base
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn m(&self) -> usize {
        self.pieces.len()
    }

    /// `max_i tr(A_i X) + c_i`.
    pub fn objective(&self, x: &DenseMatrix) -> f64 {
        self.pieces
            .iter()
            .map(|pc| pc.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Subproblem `q`: minimize `tr(A_q X)` where piece `q` attains the max,
    /// i.e. `tr((A_j - A_q) X) <= c_q - c_j` for every `j != q`.
    pub fn subproblem(&self, q: usize) -> Result<ElsProblem> {
        let pq = &self.pieces[q];
        let mut prob = self.base.with_objective(pq.a.clone())?;
        for (j, pj) in self.pieces.iter().enumerate() {
            if j != q {
                prob = prob.with_constraint(crate::problem::LinearConstraint::upper_bound(
                    &pj.a - &pq.a,
                    pq.c - pj.c,
                ))?;
            }
        }
        Ok(prob)
    }
}

#[derive(Deserialize)]
struct RawPiece {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    c: f64,
}

#[derive(Deserialize)]
struct RawMinimax {
    n: usize,
    p: usize,
    #[serde(rename = "A0", default)]
    a0: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    constraints: Vec<RawConstraint>,
    pieces: Vec<RawPiece>,
}

/// Parses a min-max file: a problem file whose `A0` is optional plus
/// `"pieces": [{"A": ..., "c": ...}]`.
pub fn parse_minimax(text: &str) -> Result<MinimaxProblem> {
    let raw: RawMinimax = serde_json::from_str(text).map_err(parse_error)?;
    let a0 = match &raw.a0 {
        Some(rows) => matrix_from_rows(rows, "A0")?,
        None => DenseMatrix::zeros(raw.p, raw.n),
    };
    let base = ElsProblem::new(raw.n, raw.p, a0, constraints_from_raw(&raw.constraints)?)?;
    let pieces = raw
        .pieces
        .iter()
        .enumerate()
        .map(|(i, pc)| {
            Ok(Piece {
                a: matrix_from_rows(&pc.a, &format!("pieces[{i}].A"))?,
                c: pc.c,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    MinimaxProblem::new(base, pieces)
}

pub fn serialize_minimax(mm: &MinimaxProblem) -> String {
    let base = &mm.base;
    let mut out = String::new();
    let _ = writeln!(out, "{{\n  \"n\": {},\n  \"p\": {},", base.n(), base.p());
    write_constraints(&mut out, base.constraints());
    out.push_str(",\n  \"pieces\": [\n");
    for (i, pc) in mm.pieces.iter().enumerate() {
        let sep = if i + 1 == mm.pieces.len() { "" } else { "," };
        let _ = writeln!(
            out,
            "    {{\"A\": {}, \"c\": {}}}{sep}",
            fmt_matrix(&pc.a),
            fmt_real(pc.c)
        );
    }
    out.push_str("  ]\n}\n");
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct SubproblemResult {
    pub piece: usize,
    pub status: CrStatus,
    /// Subproblem optimum plus `c_q`; absent unless optimal.
    pub value: Option<f64>,
    pub recovered: bool,
}

#[derive(Debug, Clone)]
pub struct MinimaxSolution {
    pub value: f64,
    /// Lowest-index piece attaining the value.
    pub piece: usize,
    pub x: DenseMatrix,
    /// Whether `x` is a recovered Stiefel point rather than a relaxation
    /// optimum.
    pub stiefel: bool,
    pub subproblems: Vec<SubproblemResult>,
}

/// Decomposition: solves each subproblem through the relaxation and, when
/// `p <= n - (k + m - 1)`, rank reduction; returns the best piece.
pub fn solve_minimax(mm: &MinimaxProblem, cfg: &SolverConfig, rank_tol: f64) -> Result<MinimaxSolution> {
    cfg.validate()?;
    let base = &mm.base;
    let reducible = base.p() + base.k() + mm.m() - 1 <= base.n();
    let runs = (0..mm.m())
        .into_par_iter()
        .map(|q| -> Result<_> {
            let sub = mm.subproblem(q)?;
            if reducible {
                let run = solve_pipeline(&sub, cfg, rank_tol)?;
                let value = run.recovered_value(&sub).unwrap_or(run.relaxation.value);
                let x = run.recovered.as_ref().map_or(run.relaxation.x.clone(), |pt| pt.x.clone());
                Ok((run.relaxation.status, value, x, run.recovered.is_some()))
            } else {
                let sol = crate::cr::solve_cr(&sub, cfg)?;
                Ok((sol.status, sol.value, sol.x, false))
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(f64, usize)> = None;
    let mut subproblems = Vec::with_capacity(runs.len());
    for (q, (status, value, _, recovered)) in runs.iter().enumerate() {
        let total = (*status == CrStatus::Optimal).then(|| value + mm.pieces[q].c);
        if let Some(v) = total {
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, q));
            }
        }
        subproblems.push(SubproblemResult {
            piece: q,
            status: *status,
            value: total,
            recovered: *recovered,
        });
    }
    let Some((value, piece)) = best else {
        if runs.iter().any(|r| r.0 == CrStatus::NumericalFailure) {
            return Err(ElsError::NumericalFailure("no subproblem solved to optimality".into()));
        }
        return Err(ElsError::Infeasible("every min-max subproblem is infeasible".into()));
    };
    let (_, _, x, stiefel) = runs.into_iter().nth(piece).expect("piece index in range");
    Ok(MinimaxSolution {
        value,
        piece,
        x,
        stiefel,
        subproblems,
    })
}

#[derive(Debug, Clone)]
pub struct EpigraphSolution {
    pub value: f64,
    pub x: DenseMatrix,
    pub status: CrStatus,
}

/// Single convex program `min t` over `X^T X <= I_p`, the base constraints
/// and `tr(A_q X) + c_q <= t`. The level is capped at a bound no piece can
/// reach on the unit ball, which keeps phase I bounded.
pub fn solve_minimax_epigraph(mm: &MinimaxProblem, cfg: &SolverConfig) -> Result<EpigraphSolution> {
    cfg.validate()?;
    let base = &mm.base;
    let (n, p) = (base.n(), base.p());
    let np = n * p;
    let dim = np + 1;
    let mut ineq = Vec::new();
    let mut eq = Vec::new();
    push_constraints(base, dim, &mut ineq, &mut eq);
    let mut cap = f64::NEG_INFINITY;
    for pc in &mm.pieces {
        let mut g = DVector::zeros(dim);
        g.rows_mut(0, np).copy_from(&trace_functional(&pc.a));
        g[np] = -1.0;
        ineq.push((g, -pc.c));
        cap = cap.max(pc.a.norm() * (p as f64).sqrt() + pc.c);
    }
    let mut g = DVector::zeros(dim);
    g[np] = 1.0;
    ineq.push((g, cap + 1.0));
    let (eq_a, eq_b) = equality_system(eq, dim);
    let mut cost = DVector::zeros(dim);
    cost[np] = 1.0;
    let prog = BallProgram {
        n,
        p,
        cost,
        ineq,
        eq_a,
        eq_b,
    };
    let res = solve_program(&prog, cfg)?;
    let x = unvec_cols(&res.y.as_slice()[..np], n, p);
    Ok(EpigraphSolution {
        value: res.y[np],
        x,
        status: status_of(res.outcome),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cr::solve_ls_svd;
    use crate::oracle::minimax_oracle;
    use crate::problem::LinearConstraint;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn free_base(n: usize, p: usize) -> ElsProblem {
        ElsProblem::new(n, p, DenseMatrix::zeros(p, n), vec![]).unwrap()
    }

    fn random_pieces(rng: &mut ChaCha8Rng, m: usize, p: usize, n: usize) -> Vec<Piece> {
        (0..m)
            .map(|_| Piece {
                a: gaussian(rng, p, n),
                c: StandardNormal.sample(rng),
            })
            .collect()
    }

    #[test]
    fn single_piece_is_plain_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian(&mut rng, 2, 5);
        let mm = MinimaxProblem::new(free_base(5, 2), vec![Piece { a: a.clone(), c: 0.7 }]).unwrap();
        let sol = solve_minimax(&mm, &SolverConfig::default(), 1e-8).unwrap();
        let (_, v) = solve_ls_svd(&a).unwrap();
        assert!((sol.value - (v + 0.7)).abs() <= 1e-6);
        assert!(sol.stiefel);
        assert!((mm.objective(&sol.x) - sol.value).abs() <= 1e-6);
    }

    #[test]
    fn identical_pieces_tie_to_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = gaussian(&mut rng, 1, 4);
        let pc = Piece { a: a.clone(), c: -0.2 };
        let mm = MinimaxProblem::new(free_base(4, 1), vec![pc.clone(), pc]).unwrap();
        let sol = solve_minimax(&mm, &SolverConfig::default(), 1e-8).unwrap();
        let (_, v) = solve_ls_svd(&a).unwrap();
        assert_eq!(sol.piece, 0);
        assert!((sol.value - (v - 0.2)).abs() <= 1e-6);
        let (s0, s1) = (sol.subproblems[0].value.unwrap(), sol.subproblems[1].value.unwrap());
        assert!((s0 - s1).abs() <= 1e-6);
    }

    #[test]
    fn random_sphere_instance_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mm = MinimaxProblem::new(free_base(6, 1), random_pieces(&mut rng, 3, 1, 6)).unwrap();
        let sol = solve_minimax(&mm, &SolverConfig::default(), 1e-8).unwrap();
        let oracle = minimax_oracle(&mm, 16, 1).unwrap();
        assert!((sol.value - oracle.value).abs() <= 1e-5, "{} vs {}", sol.value, oracle.value);
        assert!(sol.stiefel);
        assert!((mm.objective(&sol.x) - sol.value).abs() <= 1e-5);
    }

    #[test]
    fn epigraph_matches_decomposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..6 {
            let m = 1 + trial % 3;
            let mm = MinimaxProblem::new(free_base(5, 2), random_pieces(&mut rng, m, 2, 5)).unwrap();
            let cfg = SolverConfig::default();
            let dec = solve_minimax(&mm, &cfg, 1e-8).unwrap();
            let epi = solve_minimax_epigraph(&mm, &cfg).unwrap();
            assert_eq!(epi.status, CrStatus::Optimal);
            assert!((dec.value - epi.value).abs() <= 1e-6, "{} vs {}", dec.value, epi.value);
        }
    }

    #[test]
    fn dominated_piece_leaves_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pieces = random_pieces(&mut rng, 2, 1, 5);
        let mm = MinimaxProblem::new(free_base(5, 1), pieces.clone()).unwrap();
        // |tr(A X)| <= ||A||_F on the sphere, so this piece never binds.
        let mut more = pieces.clone();
        let bound = pieces.iter().map(|pc| pc.a.norm() + pc.c.abs()).fold(0.0, f64::max);
        more.push(Piece {
            a: DenseMatrix::zeros(1, 5),
            c: -2.0 * bound - 1.0,
        });
        let mm2 = MinimaxProblem::new(free_base(5, 1), more).unwrap();
        let cfg = SolverConfig::default();
        let a = solve_minimax(&mm, &cfg, 1e-8).unwrap().value;
        let b = solve_minimax(&mm2, &cfg, 1e-8).unwrap().value;
        assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
    }

    #[test]
    fn infeasible_base_reported() {
        let mut base = free_base(3, 1);
        base = base
            .with_constraint(LinearConstraint::equality(DenseMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]), 2.0))
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mm = MinimaxProblem::new(base, random_pieces(&mut rng, 2, 1, 3)).unwrap();
        assert!(matches!(
            solve_minimax(&mm, &SolverConfig::default(), 1e-8),
            Err(ElsError::Infeasible(_))
        ));
    }

    #[test]
    fn file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mm = MinimaxProblem::new(free_base(3, 1), random_pieces(&mut rng, 2, 1, 3)).unwrap();
        let back = parse_minimax(&serialize_minimax(&mm)).unwrap();
        assert_eq!(back, mm);
    }
}
