//! Independent ground truth at desk scale: multistart penalized descent on
//! the Stiefel manifold with KKT polishing, angular grid sweeps for tiny
//! dimensions, and brute force over permutations.

use itertools::Itertools;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ElsError, Result};
use crate::linalg::{min_norm_solve, qf, trace_product, unvec_cols, vec_cols, DenseMatrix};
use crate::minimax::MinimaxProblem;
use crate::problem::{residuals, ElsProblem, LinearConstraint};

/// Feasibility required of any returned point.
pub const ORACLE_FEAS_TOL: f64 = 1e-8;
const PENALTIES: [f64; 4] = [10.0, 1e2, 1e3, 1e4];
const ACTIVE_GUESSES: [f64; 2] = [1e-2, 1e-3];
const SMOOTHING: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];
const DESCENT_ITERS: usize = 600;
const GRID_STEP: f64 = 0.002;
const FRAME_GRID_STEP: f64 = 0.05;
const GRID_CANDIDATES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleSource {
    Restart,
    Grid,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub value: f64,
    pub x: DenseMatrix,
    pub source: OracleSource,
    /// Restart or grid-candidate index that produced the point.
    pub index: usize,
    pub orth_residual: f64,
    pub max_lin_residual: f64,
}

// ---------------------------------------------------------------------------
// Smooth merit functions

/// Objective part of a merit: value and Euclidean gradient.
trait Objective: Sync {
    fn eval(&self, x: &DenseMatrix) -> (f64, DenseMatrix);
}

struct Linear<'a>(&'a DenseMatrix);

impl Objective for Linear<'_> {
    fn eval(&self, x: &DenseMatrix) -> (f64, DenseMatrix) {
        (trace_product(self.0, x), self.0.transpose())
    }
}

/// `mu * log(sum_q exp((tr(A_q X) + c_q) / mu))`.
struct SoftMax<'a> {
    mm: &'a MinimaxProblem,
    mu: f64,
}

impl Objective for SoftMax<'_> {
    fn eval(&self, x: &DenseMatrix) -> (f64, DenseMatrix) {
        let vals: Vec<f64> = self.mm.pieces().iter().map(|pc| pc.value(x)).collect();
        let top = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = vals.iter().map(|v| ((v - top) / self.mu).exp()).collect();
        let total: f64 = w.iter().sum();
        let mut grad = DenseMatrix::zeros(x.nrows(), x.ncols());
        for (pc, wi) in self.mm.pieces().iter().zip(&w) {
            grad += pc.a.transpose() * (wi / total);
        }
        (top + self.mu * total.ln(), grad)
    }
}

/// `obj(X) + rho * sum_i violation_i(X)^2`.
fn penalized(
    obj: &dyn Objective,
    cs: &[LinearConstraint],
    rho: f64,
    x: &DenseMatrix,
) -> (f64, DenseMatrix) {
    let (mut f, mut g) = obj.eval(x);
    for c in cs {
        let v = c.value(x);
        let (viol, sign) = if v > c.upper {
            (v - c.upper, 1.0)
        } else if v < c.lower {
            (c.lower - v, -1.0)
        } else {
            continue;
        };
        f += rho * viol * viol;
        g += c.a.transpose() * (2.0 * rho * viol * sign);
    }
    (f, g)
}

fn riemannian_grad(x: &DenseMatrix, g: &DenseMatrix) -> DenseMatrix {
    let xtg = x.transpose() * g;
    g - x * ((&xtg + xtg.transpose()) * 0.5)
}

/// Riemannian gradient descent with QR retraction, Barzilai-Borwein trial
/// steps and Armijo backtracking.
fn descend(merit: &dyn Fn(&DenseMatrix) -> (f64, DenseMatrix), x0: &DenseMatrix) -> DenseMatrix {
    let mut x = x0.clone();
    let (mut f, g) = merit(&x);
    let mut r = riemannian_grad(&x, &g);
    let mut alpha: f64 = 1.0 / (1.0 + r.norm());
    for _ in 0..DESCENT_ITERS {
        let rn2 = r.norm_squared();
        if rn2.sqrt() <= 1e-12 {
            break;
        }
        let mut step = alpha.clamp(1e-10, 1e2);
        let mut next = None;
        for _ in 0..50 {
            let cand = qf(&(&x - &r * step));
            let (fc, gc) = merit(&cand);
            if fc <= f - 1e-4 * step * rn2 {
                next = Some((cand, fc, gc));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew, gn)) = next else {
            break;
        };
        let rn = riemannian_grad(&xn, &gn);
        let s = &xn - &x;
        let y = &rn - &r;
        let sy = s.dot(&y);
        alpha = if sy.abs() > 1e-300 { s.norm_squared() / sy.abs() } else { step * 2.0 };
        let done = (f - fnew).abs() <= 1e-15 * (1.0 + f.abs());
        x = xn;
        f = fnew;
        r = rn;
        if done {
            break;
        }
    }
    x
}

// ---------------------------------------------------------------------------
// KKT polishing

/// Square nonlinear system for a KKT point: unknowns are `vec(X)`,
/// `vech(Lambda)`, one multiplier per active term and, for min-max, the level
/// `t`. Stationarity reads `g0 + sum_j u_j vec(G_j^T) + vec(X Lambda) = 0`.
struct KktSystem {
    n: usize,
    p: usize,
    fixed: DVector<f64>,
    /// `(G_j, offset_j, level)`: the equation `tr(G_j X) + offset_j = t`
    /// when `level`, else `= 0`.
    terms: Vec<(DenseMatrix, f64, bool)>,
    /// Min-max form: weights of the level terms sum to one.
    with_level: bool,
}

impl KktSystem {
    fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.p).flat_map(|b| (0..=b).map(move |a| (a, b))).collect()
    }

    fn sizes(&self) -> (usize, usize, usize) {
        let np = self.n * self.p;
        let nl = self.p * (self.p + 1) / 2;
        (np, nl, self.terms.len())
    }

    fn unknowns(&self) -> usize {
        let (np, nl, m) = self.sizes();
        np + nl + m + usize::from(self.with_level)
    }

    fn unpack(&self, u: &DVector<f64>) -> (DenseMatrix, DenseMatrix, Vec<f64>, f64) {
        let (np, nl, m) = self.sizes();
        let x = unvec_cols(&u.as_slice()[..np], self.n, self.p);
        let mut lam = DenseMatrix::zeros(self.p, self.p);
        for (t, &(a, b)) in self.pairs().iter().enumerate() {
            lam[(a, b)] = u[np + t];
            lam[(b, a)] = u[np + t];
        }
        let mults = u.as_slice()[np + nl..np + nl + m].to_vec();
        let level = if self.with_level { u[np + nl + m] } else { 0.0 };
        (x, lam, mults, level)
    }

    fn residual(&self, u: &DVector<f64>) -> DVector<f64> {
        let (np, nl, m) = self.sizes();
        let (x, lam, mults, level) = self.unpack(u);
        let mut out = DVector::zeros(self.unknowns());
        let mut stat = self.fixed.clone() + vec_cols(&(&x * &lam));
        for ((g, _, _), &w) in self.terms.iter().zip(&mults) {
            stat += vec_cols(&g.transpose()) * w;
        }
        out.rows_mut(0, np).copy_from(&stat);
        let gram = x.transpose() * &x;
        for (t, &(a, b)) in self.pairs().iter().enumerate() {
            out[np + t] = gram[(a, b)] - if a == b { 1.0 } else { 0.0 };
        }
        for (j, (g, off, lv)) in self.terms.iter().enumerate() {
            out[np + nl + j] = trace_product(g, &x) + off - if *lv { level } else { 0.0 };
        }
        if self.with_level {
            let total: f64 = self
                .terms
                .iter()
                .zip(&mults)
                .filter(|((_, _, lv), _)| *lv)
                .map(|(_, w)| w)
                .sum();
            out[np + nl + m] = total - 1.0;
        }
        out
    }

    fn jacobian(&self, u: &DVector<f64>) -> DenseMatrix {
        let (n, p) = (self.n, self.p);
        let (np, nl, m) = self.sizes();
        let (x, lam, _, _) = self.unpack(u);
        let dim = self.unknowns();
        let mut jac = DenseMatrix::zeros(dim, dim);
        // d vec(X Lambda) / d vec(X) = Lambda kron I_n.
        let kron = lam.kronecker(&DenseMatrix::identity(n, n));
        jac.view_mut((0, 0), (np, np)).copy_from(&kron);
        for (t, &(a, b)) in self.pairs().iter().enumerate() {
            let mut e = DenseMatrix::zeros(p, p);
            e[(a, b)] = 1.0;
            e[(b, a)] = 1.0;
            jac.view_mut((0, np + t), (np, 1)).copy_from(&vec_cols(&(&x * e)));
            // d (X_a^T X_b) = X_a^T dX_b + dX_a^T X_b.
            for r in 0..n {
                jac[(np + t, b * n + r)] += x[(r, a)];
                jac[(np + t, a * n + r)] += x[(r, b)];
            }
        }
        for (j, (g, _, lv)) in self.terms.iter().enumerate() {
            let gv = vec_cols(&g.transpose());
            jac.view_mut((0, np + nl + j), (np, 1)).copy_from(&gv);
            jac.view_mut((np + nl + j, 0), (1, np)).copy_from(&gv.transpose());
            if *lv {
                jac[(np + nl + j, np + nl + m)] = -1.0;
                jac[(np + nl + m, np + nl + j)] = 1.0;
            }
        }
        jac
    }

    /// Least-squares multipliers (and level) at a fixed `X`.
    fn initial(&self, x: &DenseMatrix) -> DVector<f64> {
        let (np, nl, m) = self.sizes();
        let mut u = DVector::zeros(self.unknowns());
        u.rows_mut(0, np).copy_from(&vec_cols(x));
        let jac = self.jacobian(&u);
        let res = self.residual(&u);
        // Stationarity (plus the weight sum) is linear in the multipliers.
        let mut rows: Vec<usize> = (0..np).collect();
        if self.with_level {
            rows.push(np + nl + m);
        }
        let cols: Vec<usize> = (np..np + nl + m).collect();
        let a = jac.select_rows(&rows).select_columns(&cols);
        let b = -DVector::from_iterator(rows.len(), rows.iter().map(|&r| res[r]));
        if let Ok(sol) = min_norm_solve(&a, &b, 1e-12) {
            u.rows_mut(np, nl + m).copy_from(&sol);
        }
        if self.with_level {
            let lvl = self
                .terms
                .iter()
                .filter(|(_, _, lv)| *lv)
                .map(|(g, off, _)| trace_product(g, x) + off)
                .fold(f64::NEG_INFINITY, f64::max);
            u[np + nl + m] = lvl;
        }
        u
    }

    /// Damped Newton with least-squares steps.
    fn solve(&self, x0: &DenseMatrix) -> Option<DenseMatrix> {
        let mut u = self.initial(x0);
        let mut r = self.residual(&u);
        let scale = 1.0 + self.fixed.norm() + self.terms.iter().map(|(g, _, _)| g.norm()).sum::<f64>();
        for _ in 0..60 {
            let rn = r.norm();
            if rn <= 1e-13 * scale {
                break;
            }
            let step = min_norm_solve(&self.jacobian(&u), &(-&r), 1e-13).ok()?;
            let mut alpha = 1.0;
            let mut improved = false;
            for _ in 0..30 {
                let cand = &u + &step * alpha;
                let rc = self.residual(&cand);
                if rc.norm() < rn {
                    u = cand;
                    r = rc;
                    improved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !improved {
                break;
            }
        }
        let (x, ..) = self.unpack(&u);
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

/// Constraints whose value is within `delta * (1 + |bound|)` of a bound or
/// beyond it, as equations `tr(A X) - bound = 0`.
fn active_guess(cs: &[LinearConstraint], x: &DenseMatrix, delta: f64) -> Vec<(DenseMatrix, f64, bool)> {
    let mut out = Vec::new();
    for c in cs {
        let v = c.value(x);
        let near = |b: f64| b.is_finite() && v - b >= -delta * (1.0 + b.abs()) && b - v >= -delta * (1.0 + b.abs());
        if c.is_equality() || near(c.upper) || v > c.upper {
            out.push((c.a.clone(), -c.upper, false));
        } else if near(c.lower) || v < c.lower {
            out.push((c.a.clone(), -c.lower, false));
        }
    }
    out
}

fn feasible(prob: &ElsProblem, x: &DenseMatrix) -> Option<(f64, f64)> {
    let r = residuals(prob, x).ok()?;
    r.feasible(ORACLE_FEAS_TOL)
        .then(|| (r.orth_residual, r.max_lin_residual()))
}

// ---------------------------------------------------------------------------
// Local search from one start

struct Candidate {
    value: f64,
    x: DenseMatrix,
    orth: f64,
    lin: f64,
}

fn better(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (Some(a), Some(b)) => Some(if b.value < a.value { b } else { a }),
        (a, b) => a.or(b),
    }
}

/// Penalty continuation then KKT polishing under several active-set guesses.
fn local_search<F>(
    prob: &ElsProblem,
    obj_schedule: &[&dyn Objective],
    value: &F,
    polish: &dyn Fn(&DenseMatrix, f64) -> Option<DenseMatrix>,
    x0: &DenseMatrix,
) -> Option<Candidate>
where
    F: Fn(&DenseMatrix) -> f64,
{
    let cs = prob.constraints();
    let mut x = x0.clone();
    for (stage, &rho) in PENALTIES.iter().enumerate() {
        let obj = obj_schedule[stage.min(obj_schedule.len() - 1)];
        x = descend(&|y: &DenseMatrix| penalized(obj, cs, rho, y), &x);
    }
    let mut best: Option<Candidate> = None;
    let consider = |best: Option<Candidate>, y: DenseMatrix| {
        let Some((orth, lin)) = feasible(prob, &y) else {
            return best;
        };
        better(
            best,
            Some(Candidate {
                value: value(&y),
                x: y,
                orth,
                lin,
            }),
        )
    };
    best = consider(best, x.clone());
    for delta in ACTIVE_GUESSES {
        if let Some(y) = polish(&x, delta) {
            best = consider(best, y);
        }
    }
    best
}

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
    DenseMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

fn start_point(seed: u64, index: usize, n: usize, p: usize) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    qf(&gaussian(&mut rng, n, p))
}

// ---------------------------------------------------------------------------
// Angular grids

/// Orthonormal frames sampled on a grid, for `n <= 3` and `p <= 2`, and
/// `n = p = 3` through cross products.
fn grid_points(n: usize, p: usize) -> Option<Vec<DenseMatrix>> {
    use std::f64::consts::PI;
    let steps = |range: f64, h: f64| (range / h).ceil() as usize;
    let mut out = Vec::new();
    match (n, p) {
        (1, 1) => {
            out.push(DenseMatrix::from_element(1, 1, 1.0));
            out.push(DenseMatrix::from_element(1, 1, -1.0));
        }
        (2, 1) => {
            for i in 0..steps(2.0 * PI, GRID_STEP) {
                let t = i as f64 * GRID_STEP;
                out.push(DenseMatrix::from_column_slice(2, 1, &[t.cos(), t.sin()]));
            }
        }
        (2, 2) => {
            for i in 0..steps(2.0 * PI, GRID_STEP) {
                let t = i as f64 * GRID_STEP;
                let (c, s) = (t.cos(), t.sin());
                out.push(DenseMatrix::from_row_slice(2, 2, &[c, -s, s, c]));
                out.push(DenseMatrix::from_row_slice(2, 2, &[c, s, s, -c]));
            }
        }
        (3, 1) => {
            for i in 0..=steps(PI, GRID_STEP) {
                let b = (i as f64 * GRID_STEP).min(PI);
                for j in 0..steps(2.0 * PI, GRID_STEP) {
                    let a = j as f64 * GRID_STEP;
                    out.push(DenseMatrix::from_column_slice(
                        3,
                        1,
                        &[b.sin() * a.cos(), b.sin() * a.sin(), b.cos()],
                    ));
                }
            }
        }
        (3, 2) | (3, 3) => {
            let h = FRAME_GRID_STEP;
            for i in 0..steps(2.0 * PI, h) {
                for j in 0..=steps(PI, h) {
                    for l in 0..steps(2.0 * PI, h) {
                        let r = euler(i as f64 * h, (j as f64 * h).min(PI), l as f64 * h);
                        if p == 2 {
                            out.push(r.columns(0, 2).into_owned());
                        } else {
                            out.push(r.clone());
                            let mut refl = r;
                            refl.column_mut(2).neg_mut();
                            out.push(refl);
                        }
                    }
                }
            }
        }
        _ => return None,
    }
    Some(out)
}

/// `Rz(a) Ry(b) Rz(c)`.
fn euler(a: f64, b: f64, c: f64) -> DenseMatrix {
    let rz = |t: f64| DenseMatrix::from_row_slice(3, 3, &[t.cos(), -t.sin(), 0.0, t.sin(), t.cos(), 0.0, 0.0, 0.0, 1.0]);
    let ry = DenseMatrix::from_row_slice(3, 3, &[b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos()]);
    rz(a) * ry * rz(c)
}

/// Best grid points by `value + weight * total violation`, pairwise at least
/// `0.2` apart in Frobenius norm.
fn grid_candidates<F>(prob: &ElsProblem, value: &F, weight: f64) -> Vec<DenseMatrix>
where
    F: Fn(&DenseMatrix) -> f64 + Sync + ?Sized,
{
    let Some(points) = grid_points(prob.n(), prob.p()) else {
        return Vec::new();
    };
    let mut scored: Vec<(f64, usize)> = points
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let viol: f64 = prob.constraints().iter().map(|c| c.violation(x)).sum();
            (value(x) + weight * viol, i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<DenseMatrix> = Vec::new();
    for (_, i) in scored {
        if picked.len() >= GRID_CANDIDATES {
            break;
        }
        if picked.iter().all(|y| (y - &points[i]).norm() >= 0.2) {
            picked.push(points[i].clone());
        }
    }
    picked
}

// ---------------------------------------------------------------------------
// Public oracles

fn finish(best: Option<(Candidate, OracleSource, usize)>, restarts: usize) -> Result<OracleResult> {
    let (c, source, index) = best.ok_or(ElsError::NoFeasiblePoint { restarts })?;
    Ok(OracleResult {
        value: c.value,
        x: c.x,
        source,
        index,
        orth_residual: c.orth,
        max_lin_residual: c.lin,
    })
}

/// Runs `restarts` seeded local searches plus grid candidates, keeping the
/// lowest value (ties to the earliest restart, restarts before grid).
fn run_multistart<S>(
    prob: &ElsProblem,
    restarts: usize,
    seed: u64,
    value: &(dyn Fn(&DenseMatrix) -> f64 + Sync),
    search: &S,
) -> Result<OracleResult>
where
    S: Fn(&DenseMatrix) -> Option<Candidate> + Sync,
{
    let (n, p) = (prob.n(), prob.p());
    let from_restarts: Vec<Option<Candidate>> = (0..restarts)
        .into_par_iter()
        .map(|i| search(&start_point(seed, i, n, p)))
        .collect();
    let weight = 1e2 * (1.0 + prob.a0().norm());
    let grid = grid_candidates(prob, value, weight);
    let from_grid: Vec<Option<Candidate>> = grid.par_iter().map(search).collect();
    let mut best: Option<(Candidate, OracleSource, usize)> = None;
    let tagged = from_restarts
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, OracleSource::Restart, i))
        .chain(from_grid.into_iter().enumerate().map(|(i, c)| (c, OracleSource::Grid, i)));
    for (c, src, i) in tagged {
        let Some(c) = c else { continue };
        if best.as_ref().is_none_or(|(b, _, _)| c.value < b.value) {
            best = Some((c, src, i));
        }
    }
    finish(best, restarts)
}

/// Best feasible value of `min tr(A0 X)` found by multistart local search.
pub fn oracle_solve(prob: &ElsProblem, restarts: usize, seed: u64) -> Result<OracleResult> {
    let obj = Linear(prob.a0());
    let value = |x: &DenseMatrix| prob.objective(x);
    let polish = |x: &DenseMatrix, delta: f64| {
        KktSystem {
            n: prob.n(),
            p: prob.p(),
            fixed: vec_cols(&prob.a0().transpose()),
            terms: active_guess(prob.constraints(), x, delta),
            with_level: false,
        }
        .solve(x)
    };
    let search = |x0: &DenseMatrix| local_search(prob, &[&obj], &value, &polish, x0);
    run_multistart(prob, restarts, seed, &value, &search)
}

/// Best feasible value of `max_q tr(A_q X) + c_q` found by smoothed
/// multistart local search; `prob.objective` is ignored.
pub fn minimax_oracle(mm: &MinimaxProblem, restarts: usize, seed: u64) -> Result<OracleResult> {
    let base = mm.base();
    let smooth: Vec<SoftMax> = SMOOTHING.iter().map(|&mu| SoftMax { mm, mu }).collect();
    let schedule: Vec<&dyn Objective> = smooth.iter().map(|s| s as &dyn Objective).collect();
    let value = |x: &DenseMatrix| mm.objective(x);
    let polish = |x: &DenseMatrix, delta: f64| {
        let top = mm.objective(x);
        let mut terms = active_guess(base.constraints(), x, delta);
        terms.extend(
            mm.pieces()
                .iter()
                .filter(|pc| pc.value(x) >= top - delta * (1.0 + top.abs()))
                .map(|pc| (pc.a.clone(), pc.c, true)),
        );
        KktSystem {
            n: base.n(),
            p: base.p(),
            fixed: DVector::zeros(base.n() * base.p()),
            terms,
            with_level: true,
        }
        .solve(x)
    };
    let search = |x0: &DenseMatrix| local_search(base, &schedule, &value, &polish, x0);
    run_multistart(base, restarts, seed, &value, &search)
}

/// Exhaustive minimum of `tr(A0 X)` over `n x n` permutation matrices.
/// `perm[r] = c` means `X[r, c] = 1`; ties go to the lexicographically first
/// permutation.
pub fn assignment_oracle(a0: &DenseMatrix) -> Result<(f64, Vec<usize>)> {
    let n = a0.nrows();
    if !a0.is_square() || n == 0 {
        return Err(ElsError::validation("A0", "assignment cost must be square"));
    }
    if n > 8 {
        return Err(ElsError::validation("A0", "brute force is limited to n <= 8"));
    }
    let mut best = (f64::INFINITY, Vec::new());
    for perm in (0..n).permutations(n) {
        // tr(A0 X) = sum_r A0[perm[r], r].
        let v: f64 = perm.iter().enumerate().map(|(r, &c)| a0[(c, r)]).sum();
        if v < best.0 {
            best = (v, perm);
        }
    }
    Ok(best)
}

pub fn permutation_matrix(perm: &[usize]) -> DenseMatrix {
    let n = perm.len();
    let mut x = DenseMatrix::zeros(n, n);
    for (r, &c) in perm.iter().enumerate() {
        x[(r, c)] = 1.0;
    }
    x
}
