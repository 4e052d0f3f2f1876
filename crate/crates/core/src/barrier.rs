//! Dense log-barrier path following for
//! `min c^T y  s.t.  X^T X <= I_p,  g_j^T y <= h_j,  E y = f`,
//! where `X` is the leading `n * p` block of `y` read column-major and the
//! remaining entries of `y` are free scalars.
//!
//! Equalities are eliminated through `y = y0 + N z` with `N` an orthonormal
//! null-space basis of `E`. Phase I minimizes an elastic variable `tau` over
//! `X^T X <= (1 + tau) I`, `g_j^T y <= h_j + tau`.

use nalgebra::{Cholesky, DVector};

use crate::cr::SolverConfig;
use crate::error::Result;
use crate::linalg::{min_norm_solve, nullspace_basis, sym_eig, unvec_cols, DenseMatrix};

const EQ_RANK_TOL: f64 = 1e-10;
const ARMIJO: f64 = 0.25;
const CENTERED: f64 = 1e-10;
/// Phase I is driven to this fraction of `feas_tol`.
const PHASE1_GAP: f64 = 1e-2;

#[derive(Debug, Clone)]
pub(crate) struct BallProgram {
    pub n: usize,
    pub p: usize,
    pub cost: DVector<f64>,
    pub ineq: Vec<(DVector<f64>, f64)>,
    pub eq_a: DenseMatrix,
    pub eq_b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub(crate) struct BarrierResult {
    pub y: DVector<f64>,
    pub outcome: Outcome,
    pub gap: f64,
    /// Upper estimate of the phase-I elastic optimum; negative when a
    /// strictly feasible point was found.
    pub phase1: f64,
    /// Elastic relaxation kept during phase II (zero unless the feasible set
    /// has no strict interior).
    pub relaxation: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Copy)]
enum Tau {
    Free,
    Fixed(f64),
}

enum Centering {
    Centered,
    BelowZero,
    Stalled,
    Exhausted,
}

struct Affine {
    y0: DVector<f64>,
    basis: DenseMatrix,
}

impl BallProgram {
    pub fn dim(&self) -> usize {
        self.cost.len()
    }

    fn np(&self) -> usize {
        self.n * self.p
    }

    fn theta(&self) -> f64 {
        (self.n + self.p + self.ineq.len()) as f64
    }

    fn x_of(&self, y: &DVector<f64>) -> DenseMatrix {
        unvec_cols(&y.as_slice()[..self.np()], self.n, self.p)
    }

    fn gram_slack(&self, x: &DenseMatrix, tau: f64) -> DenseMatrix {
        DenseMatrix::identity(self.p, self.p) * (1.0 + tau) - x.transpose() * x
    }

    fn slacks(&self, y: &DVector<f64>, tau: f64) -> Vec<f64> {
        self.ineq.iter().map(|(g, h)| h + tau - g.dot(y)).collect()
    }

    /// Barrier value, or `None` outside the open domain.
    fn phi(&self, y: &DVector<f64>, tau: f64) -> Option<f64> {
        let s = self.slacks(y, tau);
        if s.iter().any(|&v| v <= 0.0 || !v.is_finite()) {
            return None;
        }
        let chol = Cholesky::new(self.gram_slack(&self.x_of(y), tau))?;
        let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        Some(-logdet - s.iter().map(|v| v.ln()).sum::<f64>())
    }

    /// Barrier gradient and Hessian in `(y, tau)` coordinates; the `tau`
    /// row is present only when `with_tau`.
    fn derivatives(
        &self,
        y: &DVector<f64>,
        tau: f64,
        with_tau: bool,
    ) -> Option<(DVector<f64>, DenseMatrix)> {
        let (n, p, np) = (self.n, self.p, self.np());
        let m = self.dim() + usize::from(with_tau);
        let mut grad = DVector::zeros(m);
        let mut hess = DenseMatrix::zeros(m, m);

        let x = self.x_of(y);
        let w = Cholesky::new(self.gram_slack(&x, tau))?.inverse();
        let xw = &x * &w;
        let k = &xw * x.transpose() + DenseMatrix::identity(n, n);
        for j in 0..p {
            for i in 0..n {
                let a = j * n + i;
                grad[a] = 2.0 * xw[(i, j)];
                for jj in 0..p {
                    for ii in 0..n {
                        let b = jj * n + ii;
                        hess[(a, b)] =
                            2.0 * xw[(i, jj)] * xw[(ii, j)] + 2.0 * k[(i, ii)] * w[(j, jj)];
                    }
                }
            }
        }
        if with_tau {
            let t = m - 1;
            let xw2 = &xw * &w;
            grad[t] = -w.trace();
            hess[(t, t)] = w.norm_squared();
            for a in 0..np {
                let v = -2.0 * xw2[(a % n, a / n)];
                hess[(a, t)] = v;
                hess[(t, a)] = v;
            }
        }

        let s = self.slacks(y, tau);
        for ((g, _), &sj) in self.ineq.iter().zip(&s) {
            if sj <= 0.0 {
                return None;
            }
            let mut gt = DVector::zeros(m);
            gt.rows_mut(0, self.dim()).copy_from(g);
            if with_tau {
                gt[m - 1] = -1.0;
            }
            grad.axpy(1.0 / sj, &gt, 1.0);
            hess.ger(1.0 / (sj * sj), &gt, &gt, 1.0);
        }
        Some((grad, hess))
    }

    fn affine(&self) -> Result<Option<Affine>> {
        let d = self.dim();
        if self.eq_a.nrows() == 0 {
            return Ok(Some(Affine {
                y0: DVector::zeros(d),
                basis: DenseMatrix::identity(d, d),
            }));
        }
        let y0 = min_norm_solve(&self.eq_a, &self.eq_b, EQ_RANK_TOL)?;
        let res = (&self.eq_a * &y0 - &self.eq_b).amax();
        if res > 1e-10 * (1.0 + self.eq_b.amax()) {
            return Ok(None);
        }
        let basis = nullspace_basis(&self.eq_a, EQ_RANK_TOL)?;
        Ok(Some(Affine { y0, basis }))
    }

    /// Smallest `tau` making `y` feasible for the elastic problem.
    fn elastic_value(&self, y: &DVector<f64>) -> Result<f64> {
        let x = self.x_of(y);
        let ball = sym_eig(&(x.transpose() * &x))?.eigenvalues.max() - 1.0;
        let lin = self
            .ineq
            .iter()
            .map(|(g, h)| g.dot(y) - h)
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(ball.max(lin))
    }
}

struct Solver<'a> {
    prog: &'a BallProgram,
    aff: Affine,
    cfg: &'a SolverConfig,
    steps: usize,
}

impl Solver<'_> {
    fn y_of(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.aff.y0 + &self.aff.basis * z
    }

    fn split(&self, v: &DVector<f64>, mode: Tau) -> (DVector<f64>, f64) {
        let d = self.aff.basis.ncols();
        let z = v.rows(0, d).into_owned();
        let tau = match mode {
            Tau::Free => v[d],
            Tau::Fixed(t) => t,
        };
        (self.y_of(&z), tau)
    }

    /// Objective gradient in reduced coordinates.
    fn cost(&self, mode: Tau) -> DVector<f64> {
        let d = self.aff.basis.ncols();
        match mode {
            Tau::Free => {
                let mut c = DVector::zeros(d + 1);
                c[d] = 1.0;
                c
            }
            Tau::Fixed(_) => self.aff.basis.transpose() * &self.prog.cost,
        }
    }

    fn reduced(&self, v: &DVector<f64>, mode: Tau) -> Option<(DVector<f64>, DenseMatrix)> {
        let (y, tau) = self.split(v, mode);
        let with_tau = matches!(mode, Tau::Free);
        let (g, h) = self.prog.derivatives(&y, tau, with_tau)?;
        let d = self.aff.basis.ncols();
        let m = d + usize::from(with_tau);
        let dim = self.prog.dim();
        let mut t = DenseMatrix::zeros(g.len(), m);
        t.view_mut((0, 0), (dim, d)).copy_from(&self.aff.basis);
        if with_tau {
            t[(dim, d)] = 1.0;
        }
        Some((t.transpose() * g, t.transpose() * h * &t))
    }

    fn newton_direction(grad: &DVector<f64>, hess: &DenseMatrix) -> Option<DVector<f64>> {
        let scale = hess.diagonal().amax().max(1e-300);
        let mut reg = 0.0;
        for _ in 0..12 {
            let mut h = hess.clone();
            for i in 0..h.nrows() {
                h[(i, i)] += reg;
            }
            if let Some(ch) = Cholesky::new(h) {
                let dir = -ch.solve(grad);
                if dir.iter().all(|v| v.is_finite()) {
                    return Some(dir);
                }
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        None
    }

    fn center(&mut self, v: &mut DVector<f64>, t: f64, mode: Tau) -> Centering {
        let c = self.cost(mode);
        let phase1 = matches!(mode, Tau::Free);
        for _ in 0..self.cfg.max_newton {
            let Some((gb, h)) = self.reduced(v, mode) else {
                return Centering::Stalled;
            };
            let grad = &c * t + gb;
            let Some(dir) = Self::newton_direction(&grad, &(h)) else {
                return Centering::Stalled;
            };
            let decrement = -grad.dot(&dir);
            if decrement / 2.0 <= CENTERED {
                return Centering::Centered;
            }
            let (y, tau) = self.split(v, mode);
            let Some(phi0) = self.prog.phi(&y, tau) else {
                return Centering::Stalled;
            };
            let lin = t * c.dot(&dir);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand = &*v + &dir * alpha;
                let (yc, tc) = self.split(&cand, mode);
                if let Some(phi1) = self.prog.phi(&yc, tc) {
                    if alpha * lin + (phi1 - phi0) <= -ARMIJO * alpha * decrement {
                        *v = cand;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            self.steps += 1;
            if !accepted {
                return if decrement <= 0.5 {
                    Centering::Centered
                } else {
                    Centering::Stalled
                };
            }
            if phase1 && v[v.len() - 1] < 0.0 {
                return Centering::BelowZero;
            }
        }
        Centering::Exhausted
    }
}

/// Runs phase I (when needed) and phase II.
pub(crate) fn solve_program(prog: &BallProgram, cfg: &SolverConfig) -> Result<BarrierResult> {
    let failure = |y: DVector<f64>, outcome, phase1, steps| BarrierResult {
        y,
        outcome,
        gap: f64::INFINITY,
        phase1,
        relaxation: 0.0,
        newton_steps: steps,
    };
    let Some(aff) = prog.affine()? else {
        let y = min_norm_solve(&prog.eq_a, &prog.eq_b, EQ_RANK_TOL)?;
        let r = (&prog.eq_a * &y - &prog.eq_b).amax();
        return Ok(failure(y, Outcome::Infeasible, r, 0));
    };
    let d = aff.basis.ncols();
    let theta = prog.theta();
    let mut solver = Solver {
        prog,
        aff,
        cfg,
        steps: 0,
    };

    // Phase I.
    let y0 = solver.aff.y0.clone();
    let tau0 = prog.elastic_value(&y0)?;
    let mut phase1 = tau0;
    let mut relaxation = 0.0;
    let mut z = DVector::zeros(d);
    if tau0 >= 0.0 {
        if d == 0 {
            if tau0 > cfg.feas_tol {
                return Ok(failure(y0, Outcome::Infeasible, tau0, 0));
            }
            relaxation = tau0;
        } else {
            let mut v = DVector::zeros(d + 1);
            v[d] = tau0 + 1.0;
            let mut t = 1.0;
            loop {
                match solver.center(&mut v, t, Tau::Free) {
                    Centering::BelowZero => {
                        phase1 = v[d];
                        break;
                    }
                    Centering::Centered => {}
                    Centering::Stalled | Centering::Exhausted if v[d] <= cfg.feas_tol => {
                        phase1 = v[d];
                        relaxation = v[d].max(cfg.feas_tol);
                        break;
                    }
                    Centering::Stalled | Centering::Exhausted => {
                        let (y, _) = solver.split(&v, Tau::Free);
                        return Ok(failure(
                            y,
                            Outcome::NumericalFailure,
                            v[d],
                            solver.steps,
                        ));
                    }
                }
                let gap = theta / t;
                phase1 = v[d];
                if v[d] - gap > cfg.feas_tol {
                    let (y, _) = solver.split(&v, Tau::Free);
                    return Ok(failure(y, Outcome::Infeasible, v[d] - gap, solver.steps));
                }
                if gap <= PHASE1_GAP * cfg.feas_tol {
                    relaxation = v[d].max(cfg.feas_tol);
                    break;
                }
                t *= cfg.barrier_mu;
            }
            z = v.rows(0, d).into_owned();
        }
    }

    // Phase II.
    let mode = Tau::Fixed(relaxation);
    if d == 0 {
        let y = solver.y_of(&z);
        return Ok(BarrierResult {
            y,
            outcome: Outcome::Optimal,
            gap: 0.0,
            phase1,
            relaxation,
            newton_steps: solver.steps,
        });
    }
    let mut t = 1.0;
    let mut outcome = Outcome::Optimal;
    loop {
        match solver.center(&mut z, t, mode) {
            Centering::Centered | Centering::BelowZero => {}
            Centering::Stalled | Centering::Exhausted => {
                outcome = Outcome::NumericalFailure;
                break;
            }
        }
        let y = solver.y_of(&z);
        let value = prog.cost.dot(&y);
        if theta / t <= cfg.tol * (1.0 + value.abs()) {
            break;
        }
        t *= cfg.barrier_mu;
    }
    Ok(BarrierResult {
        y: solver.y_of(&z),
        outcome,
        gap: theta / t,
        phase1,
        relaxation,
        newton_steps: solver.steps,
    })
}
