//! Optimality certificates for feasible Stiefel points: multiplier fitting,
//! the positive-semidefinite multiplier test, LICQ and second-order checks.

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{ElsError, Result};
use crate::lift::exactness_conditions;
use crate::linalg::{min_norm_solve, nullspace_basis, numeric_rank, sym_eig, vec_cols, DenseMatrix};
use crate::problem::{residuals, ElsProblem};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateTolerances {
    /// Feasibility required of the candidate.
    pub feas_tol: f64,
    /// Relative active-bound tolerance.
    pub act_tol: f64,
    /// Relative stationarity tolerance.
    pub kkt_tol: f64,
    /// Relative PSD tolerance on the matrix multiplier.
    pub psd_tol: f64,
    /// Absolute tolerance on the reduced Hessian's smallest eigenvalue.
    pub second_order_tol: f64,
    /// Rank threshold for the constraint Jacobian.
    pub rank_tol: f64,
}

impl Default for CertificateTolerances {
    fn default() -> Self {
        Self {
            feas_tol: 1e-6,
            act_tol: 1e-6,
            kkt_tol: 1e-6,
            psd_tol: 1e-7,
            second_order_tol: 1e-7,
            rank_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ActiveSet {
    pub upper_active: Vec<usize>,
    pub lower_active: Vec<usize>,
    pub equality_active: Vec<usize>,
    pub act_tol: f64,
}

impl ActiveSet {
    /// Active constraints in index order.
    pub fn indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self
            .upper_active
            .iter()
            .chain(&self.lower_active)
            .chain(&self.equality_active)
            .copied()
            .collect();
        all.sort_unstable();
        all.dedup();
        all
    }

    fn sign(&self, i: usize) -> Sign {
        let up = self.upper_active.contains(&i);
        let lo = self.lower_active.contains(&i);
        if self.equality_active.contains(&i) || (up && lo) {
            Sign::Free
        } else if up {
            Sign::NonNeg
        } else if lo {
            Sign::NonPos
        } else {
            Sign::Zero
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Sign {
    Free,
    NonNeg,
    NonPos,
    Zero,
}

pub fn active_set(prob: &ElsProblem, x: &DenseMatrix, act_tol: f64) -> ActiveSet {
    let mut set = ActiveSet {
        upper_active: Vec::new(),
        lower_active: Vec::new(),
        equality_active: Vec::new(),
        act_tol,
    };
    for (i, c) in prob.constraints().iter().enumerate() {
        let v = c.value(x);
        let near = |b: f64| b.is_finite() && (v - b).abs() <= act_tol * (1.0 + b.abs());
        if c.is_equality() {
            set.equality_active.push(i);
            continue;
        }
        if near(c.upper) {
            set.upper_active.push(i);
        }
        if near(c.lower) {
            set.lower_active.push(i);
        }
    }
    set
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktFit {
    /// Signed multipliers, zero for inactive constraints.
    pub lambda: Vec<f64>,
    /// Symmetric `p x p` multiplier of the orthonormality constraint.
    #[serde(serialize_with = "crate::report::ser_matrix")]
    pub big_lambda: DenseMatrix,
    /// `||A0^T + sum lambda_i A_i^T + X Lambda||_F`.
    pub stationarity_residual: f64,
    /// `max_i max(|lambda_i^+ (tr(A_i X) - u_i)|, |lambda_i^- (tr(A_i X) - l_i)|)`.
    pub complementarity_residual: f64,
    pub kkt_ok: bool,
}

/// Minimizes `||M t + b||` with `t_j >= 0` for `j` in `nonneg` and the other
/// coordinates free, by an active-set iteration.
fn sign_constrained_lsq(m: &DenseMatrix, b: &DVector<f64>, nonneg: &[bool]) -> Result<DVector<f64>> {
    let nv = m.ncols();
    let mut passive: Vec<bool> = nonneg.iter().map(|&c| !c).collect();
    let mut x = DVector::zeros(nv);
    let scale = 1.0 + m.norm() * (1.0 + b.norm());
    let solve = |passive: &[bool]| -> Result<DVector<f64>> {
        let cols: Vec<usize> = (0..nv).filter(|&j| passive[j]).collect();
        let mut z = DVector::zeros(nv);
        if cols.is_empty() {
            return Ok(z);
        }
        let sub = m.select_columns(&cols);
        let sol = min_norm_solve(&sub, &(-b), 1e-12)?;
        for (t, &j) in cols.iter().enumerate() {
            z[j] = sol[t];
        }
        Ok(z)
    };
    for _ in 0..(3 * nv + 10) {
        let mut z = solve(&passive)?;
        // Step back toward feasibility while a constrained coordinate is negative.
        for _ in 0..=nv {
            let bad: Vec<usize> = (0..nv)
                .filter(|&j| nonneg[j] && passive[j] && z[j] <= 0.0)
                .collect();
            if bad.is_empty() {
                break;
            }
            let alpha = bad
                .iter()
                .map(|&j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            x += (&z - &x) * alpha;
            for j in 0..nv {
                if nonneg[j] && passive[j] && x[j] <= 1e-15 * scale {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            z = solve(&passive)?;
        }
        x = z;
        let w = -(m.transpose() * (m * &x + b));
        let candidate = (0..nv)
            .filter(|&j| nonneg[j] && !passive[j])
            .max_by(|&a, &c| w[a].total_cmp(&w[c]));
        match candidate {
            Some(j) if w[j] > 1e-12 * scale => passive[j] = true,
            _ => return Ok(x),
        }
    }
    Ok(x)
}

fn check_feasible(prob: &ElsProblem, x: &DenseMatrix, tol: f64) -> Result<()> {
    let pt = residuals(prob, x)?;
    if !pt.feasible(tol) {
        return Err(ElsError::InvalidInput(format!(
            "point is not feasible (orthonormality residual {:e}, constraint residual {:e})",
            pt.orth_residual,
            pt.max_lin_residual()
        )));
    }
    Ok(())
}

fn sym_pairs(p: usize) -> Vec<(usize, usize)> {
    (0..p).flat_map(|b| (0..=b).map(move |a| (a, b))).collect()
}

/// Jointly fits `(lambda, Lambda)` to the stationarity condition under the
/// sign pattern implied by `act`.
pub fn fit_multipliers(
    prob: &ElsProblem,
    x: &DenseMatrix,
    act: &ActiveSet,
    tol: &CertificateTolerances,
) -> Result<KktFit> {
    check_feasible(prob, x, tol.feas_tol)?;
    let (n, p) = (prob.n(), prob.p());
    let np = n * p;
    let active = act.indices();
    let pairs = sym_pairs(p);
    let mut m = DenseMatrix::zeros(np, active.len() + pairs.len());
    let mut nonneg = Vec::with_capacity(m.ncols());
    let mut flip = Vec::with_capacity(active.len());
    for (col, &i) in active.iter().enumerate() {
        let sign = act.sign(i);
        let s = if sign == Sign::NonPos { -1.0 } else { 1.0 };
        m.set_column(col, &(vec_cols(&prob.constraints()[i].a.transpose()) * s));
        nonneg.push(sign != Sign::Free);
        flip.push(s);
    }
    for (t, &(a, b)) in pairs.iter().enumerate() {
        let mut e = DenseMatrix::zeros(p, p);
        e[(a, b)] = 1.0;
        e[(b, a)] = 1.0;
        m.set_column(active.len() + t, &vec_cols(&(x * e)));
        nonneg.push(false);
    }
    let b = vec_cols(&prob.a0().transpose());
    let theta = sign_constrained_lsq(&m, &b, &nonneg)?;

    let mut lambda = vec![0.0; prob.k()];
    for (col, &i) in active.iter().enumerate() {
        lambda[i] = theta[col] * flip[col];
    }
    let mut big_lambda = DenseMatrix::zeros(p, p);
    for (t, &(a, c)) in pairs.iter().enumerate() {
        big_lambda[(a, c)] = theta[active.len() + t];
        big_lambda[(c, a)] = theta[active.len() + t];
    }
    let stationarity_residual = (&m * &theta + &b).norm();
    let complementarity_residual = prob
        .constraints()
        .iter()
        .zip(&lambda)
        .map(|(c, &l)| {
            let v = c.value(x);
            let up = if l > 0.0 { (l * (v - c.upper)).abs() } else { 0.0 };
            let lo = if l < 0.0 { (l * (v - c.lower)).abs() } else { 0.0 };
            up.max(lo)
        })
        .fold(0.0, f64::max);
    Ok(KktFit {
        lambda,
        big_lambda,
        stationarity_residual,
        complementarity_residual,
        kkt_ok: stationarity_residual <= tol.kkt_tol * (1.0 + prob.a0().norm()),
    })
}

/// Columns are the gradients of `X_i^T X_j` for `i = j`, then `i < j`, then
/// of the active linear constraints, each as a column-major `np` vector.
pub fn constraint_jacobian(prob: &ElsProblem, x: &DenseMatrix, act: &ActiveSet) -> DenseMatrix {
    let (n, p) = (prob.n(), prob.p());
    let active = act.indices();
    let mut pairs: Vec<(usize, usize)> = (0..p).map(|i| (i, i)).collect();
    pairs.extend((0..p).flat_map(|i| (i + 1..p).map(move |j| (i, j))));
    let mut jac = DenseMatrix::zeros(n * p, pairs.len() + active.len());
    for (col, &(i, j)) in pairs.iter().enumerate() {
        jac.view_mut((i * n, col), (n, 1)).copy_from(&x.column(j));
        jac.view_mut((j * n, col), (n, 1)).copy_from(&x.column(i));
    }
    for (t, &i) in active.iter().enumerate() {
        jac.set_column(pairs.len() + t, &vec_cols(&prob.constraints()[i].a.transpose()));
    }
    jac
}

/// `(licq, rank)` where `licq` holds when the Jacobian has full column rank.
pub fn licq_check(
    prob: &ElsProblem,
    x: &DenseMatrix,
    act: &ActiveSet,
    rank_tol: f64,
) -> Result<(bool, usize)> {
    let jac = constraint_jacobian(prob, x, act);
    let rank = numeric_rank(&jac, rank_tol)?;
    Ok((rank == jac.ncols(), rank))
}

/// Smallest eigenvalue of `Z^T (Lambda kron I_n) Z` over the critical
/// subspace, or `None` when the subspace is `{0}`.
pub fn reduced_hessian_min_eig(
    prob: &ElsProblem,
    x: &DenseMatrix,
    act: &ActiveSet,
    fit: &KktFit,
    rank_tol: f64,
) -> Result<Option<f64>> {
    let n = prob.n();
    let jac = constraint_jacobian(prob, x, act);
    let z = nullspace_basis(&jac.transpose(), rank_tol)?;
    if z.ncols() == 0 {
        return Ok(None);
    }
    let kron = fit.big_lambda.kronecker(&DenseMatrix::identity(n, n));
    let h = z.transpose() * kron * &z;
    Ok(Some(sym_eig(&h)?.eigenvalues[0]))
}

pub fn second_order_check(
    prob: &ElsProblem,
    x: &DenseMatrix,
    act: &ActiveSet,
    fit: &KktFit,
    tol: &CertificateTolerances,
) -> Result<bool> {
    Ok(reduced_hessian_min_eig(prob, x, act, fit, tol.rank_tol)?
        .is_none_or(|e| e >= -tol.second_order_tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Route {
    /// Stationarity with a positive semidefinite matrix multiplier.
    PsdMultiplier,
    /// LICQ, stationarity and second-order necessity with `p + 1 <= n - k`.
    SecondOrder,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conclusion {
    Global,
    NotLocalMinimizer,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateVerdict {
    pub kkt_ok: bool,
    pub lambda_psd: bool,
    pub licq: bool,
    pub jacobian_rank: usize,
    pub second_order_ok: bool,
    pub global: bool,
    pub route: Route,
    pub conclusion: Conclusion,
    pub active: ActiveSet,
    pub fit: KktFit,
}

pub fn certify_global(
    prob: &ElsProblem,
    x: &DenseMatrix,
    tol: &CertificateTolerances,
) -> Result<CertificateVerdict> {
    let act = active_set(prob, x, tol.act_tol);
    let fit = fit_multipliers(prob, x, &act, tol)?;
    let min_eig = sym_eig(&fit.big_lambda)?.eigenvalues[0];
    let lambda_psd = min_eig >= -tol.psd_tol * (1.0 + fit.big_lambda.norm());
    let (licq, jacobian_rank) = licq_check(prob, x, &act, tol.rank_tol)?;
    let second_order_ok = fit.kkt_ok && second_order_check(prob, x, &act, &fit, tol)?;
    let dims_ok = exactness_conditions(prob.n(), prob.p(), prob.k()).no_local_nonglobal;

    let route = if fit.kkt_ok && lambda_psd {
        Route::PsdMultiplier
    } else if licq && fit.kkt_ok && second_order_ok && dims_ok {
        Route::SecondOrder
    } else {
        Route::None
    };
    let global = route != Route::None;
    let conclusion = if global {
        Conclusion::Global
    } else if licq && fit.kkt_ok && !second_order_ok && dims_ok {
        Conclusion::NotLocalMinimizer
    } else {
        Conclusion::Inconclusive
    };
    Ok(CertificateVerdict {
        kkt_ok: fit.kkt_ok,
        lambda_psd,
        licq,
        jacobian_rank,
        second_order_ok,
        global,
        route,
        conclusion,
        active: act,
        fit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cr::solve_ls_svd;
    use crate::fixtures::{build_fixture, example52_points, Fixture};
    use crate::linalg::{qf, trace_product};
    use crate::problem::LinearConstraint;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DenseMatrix {
        DenseMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
    }

    fn fixture(f: Fixture) -> ElsProblem {
        build_fixture(&f).unwrap().into_els().unwrap()
    }

    fn col(v: &[f64]) -> DenseMatrix {
        DenseMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn example51_positive_point() {
        let prob = fixture(Fixture::Example51);
        let x = col(&[0.0, 1.0]);
        let tol = CertificateTolerances::default();
        let act = active_set(&prob, &x, tol.act_tol);
        assert_eq!(act.upper_active, vec![0]);
        let fit = fit_multipliers(&prob, &x, &act, &tol).unwrap();
        assert!((fit.lambda[0] - 1.0).abs() <= 1e-8);
        assert!((fit.big_lambda[(0, 0)] - 2.0).abs() <= 1e-8);
        assert!(fit.stationarity_residual <= 1e-12);
        assert!(fit.complementarity_residual <= 1e-12);
        assert!(second_order_check(&prob, &x, &act, &fit, &tol).unwrap());
        let v = certify_global(&prob, &x, &tol).unwrap();
        assert!(v.global);
        assert_eq!(v.route, Route::PsdMultiplier);
    }

    #[test]
    fn example51_negative_point() {
        let prob = fixture(Fixture::Example51);
        let x = col(&[0.0, -1.0]);
        let tol = CertificateTolerances::default();
        let v = certify_global(&prob, &x, &tol).unwrap();
        assert!((v.fit.lambda[0] - 1.0).abs() <= 1e-8);
        assert!((v.fit.big_lambda[(0, 0)] + 2.0).abs() <= 1e-8);
        assert!(v.kkt_ok && !v.lambda_psd && !v.global);
        assert_eq!(v.route, Route::None);
        assert_eq!(v.conclusion, Conclusion::Inconclusive);
    }

    #[test]
    fn example52_jacobian_ranks() {
        let prob = fixture(Fixture::Example52);
        let (bar, tilde) = example52_points();
        let tol = CertificateTolerances::default();
        let act = active_set(&prob, &bar, tol.act_tol);
        let jac = constraint_jacobian(&prob, &bar, &act);
        let expect = DenseMatrix::from_row_slice(
            8,
            4,
            &[
                1., 0., 0., 1., 0., 0., 1., 1., 0., 0., 0., 0., 0., 0., 0., 0., //
                0., 0., 1., 1., 0., 1., 0., 0., 0., 0., 0., 0., 0., 0., 0., 0.,
            ],
        );
        assert_eq!(jac, expect);
        assert_eq!(licq_check(&prob, &bar, &act, 1e-8).unwrap(), (false, 3));
        let act = active_set(&prob, &tilde, tol.act_tol);
        assert_eq!(licq_check(&prob, &tilde, &act, 1e-8).unwrap(), (true, 4));
    }

    #[test]
    fn svd_solution_is_certified() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tol = CertificateTolerances::default();
        for trial in 0..20 {
            let n = 1 + trial % 6;
            let p = 1 + trial % n;
            let a = gaussian(&mut rng, p, n);
            let (pt, _) = solve_ls_svd(&a).unwrap();
            let prob = ElsProblem::new(n, p, a.clone(), vec![]).unwrap();
            let v = certify_global(&prob, &pt.x, &tol).unwrap();
            assert!(v.fit.stationarity_residual <= 1e-9, "n={n} p={p} {}", v.fit.stationarity_residual);
            let expect = -(pt.x.transpose() * a.transpose());
            assert!((&v.fit.big_lambda - &expect).norm() <= 1e-9, "{} {} {}", v.fit.big_lambda, expect, v.fit.stationarity_residual);
            assert!(v.global && v.licq && v.second_order_ok);
        }
    }

    #[test]
    fn indefinite_multiplier_fails_second_order() {
        // k = 0, n = 3, p = 1: the maximizer x = a / |a| has Lambda = -|a|.
        let prob = ElsProblem::new(3, 1, DenseMatrix::from_row_slice(1, 3, &[1.0, 2.0, 2.0]), vec![])
            .unwrap();
        let x = col(&[1.0, 2.0, 2.0]) / 3.0;
        let tol = CertificateTolerances::default();
        let v = certify_global(&prob, &x, &tol).unwrap();
        assert!(v.kkt_ok && v.licq && !v.second_order_ok);
        assert_eq!(v.conclusion, Conclusion::NotLocalMinimizer);
    }

    #[test]
    fn infeasible_point_rejected() {
        let prob = fixture(Fixture::Example51);
        let tol = CertificateTolerances::default();
        assert!(certify_global(&prob, &col(&[-1.0, 0.0]), &tol).is_ok());
        assert!(certify_global(&prob, &col(&[0.5, 0.5]), &tol).is_err());
    }

    #[test]
    fn lower_active_gets_nonpositive_multiplier() {
        // min -x1 - 2 x2 with x1 >= 0 flipped: min x1 + 2 x2 with -x1 <= 0
        // becomes a lower bound x1 >= 0 at (0, -1).
        let prob = ElsProblem::new(
            2,
            1,
            DenseMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            vec![LinearConstraint::lower_bound(DenseMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 0.0)],
        )
        .unwrap();
        let v = certify_global(&prob, &col(&[0.0, -1.0]), &CertificateTolerances::default()).unwrap();
        assert!((v.fit.lambda[0] + 1.0).abs() <= 1e-8);
        assert!(v.global);
    }

    #[test]
    fn sign_constrained_lsq_clamps() {
        let m = DenseMatrix::identity(2, 2);
        let b = DVector::from_vec(vec![1.0, -1.0]);
        let x = sign_constrained_lsq(&m, &b, &[true, true]).unwrap();
        assert_eq!(x, DVector::from_vec(vec![0.0, 1.0]));
        let x = sign_constrained_lsq(&m, &b, &[false, true]).unwrap();
        assert_eq!(x, DVector::from_vec(vec![-1.0, 1.0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn scaling_objective_scales_multipliers(seed in any::<u64>(), c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3 + (seed % 3) as usize;
            let p = 1 + (seed / 3 % 2) as usize;
            let x = qf(&gaussian(&mut rng, n, p));
            let a1 = gaussian(&mut rng, p, n);
            let v1 = trace_product(&a1, &x);
            let prob = ElsProblem::new(
                n,
                p,
                gaussian(&mut rng, p, n),
                vec![LinearConstraint::upper_bound(a1, v1)],
            )
            .unwrap();
            let tol = CertificateTolerances::default();
            let base = certify_global(&prob, &x, &tol).unwrap();
            let scaled_prob = prob.with_objective(prob.a0() * c).unwrap();
            let scaled = certify_global(&scaled_prob, &x, &tol).unwrap();
            for (a, b) in base.fit.lambda.iter().zip(&scaled.fit.lambda) {
                prop_assert!((a * c - b).abs() <= 1e-8 * (1.0 + b.abs()));
            }
            prop_assert!((&base.fit.big_lambda * c - &scaled.fit.big_lambda).norm()
                <= 1e-8 * (1.0 + scaled.fit.big_lambda.norm()));
            prop_assert_eq!(base.kkt_ok, scaled.kkt_ok);
            prop_assert_eq!(base.lambda_psd, scaled.lambda_psd);
            prop_assert_eq!(base.licq, scaled.licq);
            prop_assert_eq!(base.global, scaled.global);
        }

        #[test]
        fn licq_rank_invariant_under_rotation(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 3 + (seed % 3) as usize;
            let p = 2;
            let x = qf(&gaussian(&mut rng, n, p));
            let q = qf(&gaussian(&mut rng, p, p));
            let a1 = gaussian(&mut rng, p, n);
            let v1 = trace_product(&a1, &x);
            let prob = ElsProblem::new(n, p, DenseMatrix::zeros(p, n), vec![LinearConstraint::equality(a1.clone(), v1)]).unwrap();
            // tr(A X) = tr((Q^T A)(X Q)).
            let rot = ElsProblem::new(n, p, DenseMatrix::zeros(p, n), vec![LinearConstraint::equality(q.transpose() * &a1, v1)]).unwrap();
            let xr = &x * &q;
            let act = active_set(&prob, &x, 1e-6);
            let act_r = active_set(&rot, &xr, 1e-6);
            prop_assert_eq!(licq_check(&prob, &x, &act, 1e-8).unwrap(), licq_check(&rot, &xr, &act_r, 1e-8).unwrap());
        }

        #[test]
        fn complementarity_vanishes_on_exact_actives(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = qf(&gaussian(&mut rng, 4, 1));
            let cs = (0..2)
                .map(|_| {
                    let a = gaussian(&mut rng, 1, 4);
                    let v = trace_product(&a, &x);
                    LinearConstraint::upper_bound(a, v)
                })
                .collect();
            let prob = ElsProblem::new(4, 1, gaussian(&mut rng, 1, 4), cs).unwrap();
            let v = certify_global(&prob, &x, &CertificateTolerances::default()).unwrap();
            prop_assert!(v.fit.complementarity_residual <= 1e-12);
        }
    }
}
