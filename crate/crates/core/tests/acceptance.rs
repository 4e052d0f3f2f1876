//! Acceptance criteria. Runs without the libtest harness and prints one
//! PASS/FAIL line per criterion; exits non-zero if any criterion fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{feasible_instance, gaussian, random_minimax, random_stiefel};
use els_core::certificate::{active_set, certify_global, licq_check, CertificateTolerances, Route};
use els_core::cr::{solve_cr, solve_ls_svd, CrStatus, SolverConfig};
use els_core::fixtures::{build_fixture, example52_points, Fixture};
use els_core::lift::{lift_constraints, lift_point};
use els_core::linalg::{sym_eig, DenseMatrix};
use els_core::minimax::{solve_minimax, solve_minimax_epigraph};
use els_core::oracle::{assignment_oracle, minimax_oracle, oracle_solve};
use els_core::pipeline::solve_pipeline;
use els_core::problem::ElsProblem;
use els_core::range::{recover_g1, G1Recovery, RangeQuery};
use els_core::reduction::{reduce_to_stiefel, ReductionOutcome};
use els_core::report::{solve_report, RunOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RANK_TOL: f64 = 1e-8;
const RESTARTS: usize = 20;

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn cfg() -> SolverConfig {
    SolverConfig::default()
}

fn fixture(f: Fixture) -> ElsProblem {
    build_fixture(&f).unwrap().into_els().unwrap()
}

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(
        elapsed < limit,
        format!("runtime {:.2}s exceeds {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()),
    )
}

fn ac1_example41_gap() -> Verdict {
    let start = Instant::now();
    let opts = RunOptions {
        with_oracle: true,
        restarts: RESTARTS,
        ..RunOptions::default()
    };
    let r = solve_report(&fixture(Fixture::Example41), &opts).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let relax = r.relaxation.value;
    let oracle = r.oracle.as_ref().map(|o| o.value).ok_or("oracle found no point")?;
    check(relax.abs() <= 1e-6, format!("relaxation {relax:e} != 0"))?;
    check((oracle - 1.0).abs() <= 1e-6, format!("oracle {oracle} != 1"))?;
    check(!r.exact, "report does not flag inexactness")?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("relaxation={relax:.2e} oracle={oracle:.9} inexact flagged, {:.3}s", elapsed.as_secs_f64()))
}

/// Minimum of `X32` over a grid of the free entries of `X` with
/// `X11 = X21 = 0` and `X^T X <= I`.
fn example42_grid_minimum() -> f64 {
    let steps: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
    let mut best = f64::INFINITY;
    for &x12 in &steps {
        for &x22 in &steps {
            for &x31 in &steps {
                for &x32 in &steps {
                    let x = DenseMatrix::from_row_slice(3, 2, &[0.0, x12, 0.0, x22, x31, x32]);
                    let top = sym_eig(&(x.transpose() * &x)).unwrap().eigenvalues.max();
                    if top <= 1.0 + 1e-12 {
                        best = best.min(x32);
                    }
                }
            }
        }
    }
    best
}

fn ac2_example42_gap() -> Verdict {
    let prob = fixture(Fixture::Example42);
    let sol = solve_cr(&prob, &cfg()).map_err(|e| e.to_string())?;
    check(sol.status == CrStatus::Optimal, "relaxation not optimal")?;
    check((sol.value + 1.0).abs() <= 1e-6, format!("relaxation {} != -1", sol.value))?;
    let bar = DenseMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    let top = sym_eig(&(bar.transpose() * &bar)).unwrap().eigenvalues.max();
    let bar_feasible = top <= 1.0 && prob.constraints().iter().all(|c| c.violation(&bar) == 0.0);
    check(bar_feasible && prob.objective(&bar) == -1.0, "X-bar is not a relaxed point of value -1")?;
    let grid = example42_grid_minimum();
    check((grid + 1.0).abs() <= 1e-12, format!("grid minimum {grid} != -1"))?;
    let oracle = oracle_solve(&prob, RESTARTS, 0).map_err(|e| e.to_string())?;
    check(oracle.value.abs() <= 1e-6, format!("oracle {} != 0", oracle.value))?;
    Ok(format!("relaxation={:.9} grid={grid} oracle={:.2e}", sol.value, oracle.value))
}

fn ac3_example43() -> Verdict {
    let prob = fixture(Fixture::Example43);
    let run = solve_pipeline(&prob, &cfg(), RANK_TOL).map_err(|e| e.to_string())?;
    let v = run.relaxation.value;
    check((v + 2.0).abs() <= 1e-6, format!("relaxation {v} != -2"))?;
    let outcome = match (&run.reduction, &run.recovered) {
        (Some(ReductionOutcome::Inexact(rep)), _) => format!("inexact ({:?})", rep.reason),
        (Some(ReductionOutcome::Exact(_)), Some(pt)) if !pt.feasible(1e-6) => "infeasible recovery".to_string(),
        _ => return Err("reduction recovered a feasible Stiefel point".into()),
    };
    let oracle = oracle_solve(&prob, RESTARTS, 0).map_err(|e| e.to_string())?;
    let margin = oracle.value - v;
    check(margin >= 0.1, format!("oracle margin {margin} < 0.1"))?;
    Ok(format!("relaxation={v:.9} reduction {outcome}; oracle={:.9} margin={margin:.6}", oracle.value))
}

fn ac4_closed_form() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_value, mut worst_orth) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let n = rng.random_range(1..=6);
        let p = rng.random_range(1..=n);
        let a0 = gaussian(&mut rng, p, n);
        let prob = ElsProblem::new(n, p, a0.clone(), vec![]).unwrap();
        let (_, closed) = solve_ls_svd(&a0).map_err(|e| e.to_string())?;
        let sol = solve_cr(&prob, &cfg()).map_err(|e| e.to_string())?;
        let err = (sol.value - closed).abs();
        check(err <= 1e-6, format!("trial {trial}: relaxation {} vs {closed}", sol.value))?;
        let lifted = lift_point(&sol.x, RANK_TOL).map_err(|e| e.to_string())?;
        let out = reduce_to_stiefel(&lifted, &lift_constraints(&prob), RANK_TOL).map_err(|e| e.to_string())?;
        let ReductionOutcome::Exact(r) = out else {
            return Err(format!("trial {trial} (n={n}, p={p}): reduction inexact"));
        };
        check(r.orth_residual <= 1e-7, format!("trial {trial}: orth residual {:e}", r.orth_residual))?;
        let obj_err = (prob.objective(&r.x) - closed).abs();
        check(obj_err <= 1e-6, format!("trial {trial}: recovered objective off by {obj_err:e}"))?;
        worst_value = worst_value.max(err);
        worst_orth = worst_orth.max(r.orth_residual);
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!(
        "100 instances, max |value - closed form|={worst_value:.1e}, max orth={worst_orth:.1e}, {:.2}s",
        start.elapsed().as_secs_f64()
    ))
}

fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    let n = rng.random_range(2..=6);
    let k = rng.random_range(0..=3.min(n - 1));
    let p = rng.random_range(1..=n - k);
    (n, p, k)
}

fn ac5_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_gap, mut worst_res) = (0.0f64, 0.0f64);
    for trial in 0..100 {
        let (n, p, k) = random_dims(&mut rng);
        let prob = feasible_instance(&mut rng, n, p, k);
        let run = solve_pipeline(&prob, &cfg(), RANK_TOL).map_err(|e| e.to_string())?;
        let Some(pt) = run.recovered else {
            return Err(format!("trial {trial} (n={n}, p={p}, k={k}): no Stiefel point recovered"));
        };
        let res = pt.orth_residual.max(pt.max_lin_residual());
        check(res <= 1e-6, format!("trial {trial}: recovered residual {res:e}"))?;
        let value = prob.objective(&pt.x);
        let oracle = oracle_solve(&prob, RESTARTS, trial).map_err(|e| format!("trial {trial}: {e}"))?;
        let gap = (value - oracle.value).abs();
        check(
            gap <= 1e-5,
            format!("trial {trial} (n={n}, p={p}, k={k}): pipeline {value} vs oracle {}", oracle.value),
        )?;
        worst_gap = worst_gap.max(gap);
        worst_res = worst_res.max(res);
    }
    within(start.elapsed(), Duration::from_secs(300))?;
    Ok(format!(
        "100 instances, max |pipeline - oracle|={worst_gap:.1e}, max residual={worst_res:.1e}, {:.1}s",
        start.elapsed().as_secs_f64()
    ))
}

fn ac6_reduction_invariants() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut traces = 0;
    let mut steps_total = 0;
    let mut worst = 0.0f64;
    for trial in 0..150 {
        let (n, p, k) = random_dims(&mut rng);
        let prob = feasible_instance(&mut rng, n, p, k);
        let sol = solve_cr(&prob, &cfg()).map_err(|e| e.to_string())?;
        let lifted_set = lift_constraints(&prob);
        let start = lift_point(&sol.x, RANK_TOL).map_err(|e| e.to_string())?;
        let before: Vec<f64> = (0..=k).map(|i| lifted_set.trace(i, &start.y)).collect();
        let ReductionOutcome::Exact(r) =
            reduce_to_stiefel(&start, &lifted_set, RANK_TOL).map_err(|e| e.to_string())?
        else {
            return Err(format!("trial {trial} (n={n}, p={p}, k={k}): inexact"));
        };
        let mut rank = r.initial_rank;
        for s in &r.steps {
            check(s.rank < rank, format!("trial {trial}: rank {} after {rank}", s.rank))?;
            check(s.max_drift <= 1e-8, format!("trial {trial}: step drift {:e}", s.max_drift))?;
            let obj = (s.objective - before[0]).abs();
            check(obj <= 1e-8, format!("trial {trial}: objective drift {obj:e}"))?;
            worst = worst.max(s.max_drift).max(obj);
            rank = s.rank;
        }
        let after: Vec<f64> = (0..=k).map(|i| lifted_set.trace(i, &r.lifted.y)).collect();
        let total = before.iter().zip(&after).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        check(total <= 1e-8, format!("trial {trial}: cumulative drift {total:e}"))?;
        check(r.lifted.rank == n, format!("trial {trial}: terminal rank {} != {n}", r.lifted.rank))?;
        check(r.steps.len() <= p, format!("trial {trial}: {} steps > p = {p}", r.steps.len()))?;
        worst = worst.max(total);
        traces += 1;
        steps_total += r.steps.len();
    }
    Ok(format!("{traces} traces, {steps_total} steps, max drift={worst:.1e}"))
}

fn ac7_example51_certificate() -> Verdict {
    let prob = fixture(Fixture::Example51);
    let tol = CertificateTolerances::default();
    let pos = DenseMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
    let neg = DenseMatrix::from_column_slice(2, 1, &[0.0, -1.0]);
    let v = certify_global(&prob, &pos, &tol).map_err(|e| e.to_string())?;
    let (lam, big) = (v.fit.lambda[0], v.fit.big_lambda[(0, 0)]);
    check((lam - 1.0).abs() <= 1e-8 && (big - 2.0).abs() <= 1e-8, format!("at (0,1): lambda={lam} Lambda={big}"))?;
    check(v.global && v.route == Route::PsdMultiplier, "(0,1) not certified by the PSD multiplier")?;
    let w = certify_global(&prob, &neg, &tol).map_err(|e| e.to_string())?;
    let big_neg = w.fit.big_lambda[(0, 0)];
    check((big_neg + 2.0).abs() <= 1e-8, format!("at (0,-1): Lambda={big_neg}"))?;
    check(!w.global, "(0,-1) certified global")?;
    Ok(format!("(0,1): lambda={lam:.12} Lambda={big:.12} global; (0,-1): Lambda={big_neg:.12} not global"))
}

fn ac8_example52_licq() -> Verdict {
    let prob = fixture(Fixture::Example52);
    let (bar, tilde) = example52_points();
    let mut ranks = Vec::new();
    for x in [&bar, &tilde] {
        let act = active_set(&prob, x, 1e-6);
        let (_, rank) = licq_check(&prob, x, &act, RANK_TOL).map_err(|e| e.to_string())?;
        ranks.push(rank);
    }
    check(ranks == [3, 4], format!("ranks {ranks:?} != [3, 4]"))?;
    Ok("rank(J-bar)=3, rank(J-tilde)=4".into())
}

fn ac9_convexity() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    let mut probes = 0;
    for (n, p, k) in [(4, 1, 2), (5, 2, 2), (6, 3, 3)] {
        for pair in 0..200 {
            let a: Vec<DenseMatrix> = (0..k).map(|_| gaussian(&mut rng, p, n)).collect();
            let base = RangeQuery::new(n, p, a.clone(), vec![0.0; k]).unwrap();
            let i1 = base.image(&random_stiefel(&mut rng, n, p));
            let i2 = base.image(&random_stiefel(&mut rng, n, p));
            for w in [0.5, rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)] {
                let t: Vec<f64> = i1.iter().zip(&i2).map(|(u, v)| w * u + (1.0 - w) * v).collect();
                let q = RangeQuery::new(n, p, a.clone(), t).unwrap();
                let rec = recover_g1(&q, &cfg(), RANK_TOL)
                    .map_err(|e| format!("(n,p,k)=({n},{p},{k}) pair {pair}: {e}"))?;
                let G1Recovery::Witness(pt) = rec else {
                    return Err(format!("(n,p,k)=({n},{p},{k}) pair {pair} w={w}: no Stiefel witness"));
                };
                let res = pt.orth_residual.max(pt.max_lin_residual());
                check(res <= 1e-6, format!("(n,p,k)=({n},{p},{k}) pair {pair}: residual {res:e}"))?;
                worst = worst.max(res);
                probes += 1;
            }
        }
    }
    within(start.elapsed(), Duration::from_secs(600))?;
    Ok(format!("{probes} convex combinations recovered, max residual={worst:.1e}, {:.1}s", start.elapsed().as_secs_f64()))
}

fn ac10_minimax() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut worst_sdp, mut worst_oracle) = (0.0f64, 0.0f64);
    for trial in 0..50 {
        let n = rng.random_range(3..=6);
        let m = rng.random_range(1..=3);
        let room = n - (m - 1);
        let k = rng.random_range(0..=2.min(room - 1));
        let p = rng.random_range(1..=room - k);
        let mm = random_minimax(&mut rng, n, p, k, m);
        let dec = solve_minimax(&mm, &cfg(), RANK_TOL).map_err(|e| format!("trial {trial}: {e}"))?;
        let epi = solve_minimax_epigraph(&mm, &cfg()).map_err(|e| format!("trial {trial}: {e}"))?;
        check(epi.status == CrStatus::Optimal, format!("trial {trial}: epigraph {:?}", epi.status))?;
        let d_sdp = (dec.value - epi.value).abs();
        check(d_sdp <= 1e-6, format!("trial {trial} (n={n}, p={p}, k={k}, m={m}): decomposition {} vs single program {}", dec.value, epi.value))?;
        let oracle = minimax_oracle(&mm, RESTARTS, trial).map_err(|e| format!("trial {trial}: {e}"))?;
        let d_oracle = (dec.value - oracle.value).abs();
        check(d_oracle <= 1e-5, format!("trial {trial} (n={n}, p={p}, k={k}, m={m}): decomposition {} vs oracle {}", dec.value, oracle.value))?;
        worst_sdp = worst_sdp.max(d_sdp);
        worst_oracle = worst_oracle.max(d_oracle);
    }
    Ok(format!("50 instances, max |dec - single|={worst_sdp:.1e}, max |dec - oracle|={worst_oracle:.1e}"))
}

fn ac11_assignment() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0;
    for n in 2..=5 {
        for _ in 0..5 {
            let cost = gaussian(&mut rng, n, n);
            let (brute, _) = assignment_oracle(&cost).map_err(|e| e.to_string())?;
            let prob = fixture(Fixture::Assignment { cost });
            let sol = solve_cr(&prob, &cfg()).map_err(|e| e.to_string())?;
            check(sol.status == CrStatus::Optimal, format!("n={n}: relaxation {:?}", sol.status))?;
            check(sol.value <= brute + 1e-6, format!("n={n}: relaxation {} > brute force {brute}", sol.value))?;
            worst = worst.max(sol.value - brute);
            count += 1;
        }
    }
    Ok(format!("{count} instances, max(relaxation - brute force)={worst:.2e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("Example 4.1 relaxation gap", ac1_example41_gap),
        ("Example 4.2 relaxation gap", ac2_example42_gap),
        ("Example 4.3 inexact relaxation", ac3_example43),
        ("closed-form cross-check", ac4_closed_form),
        ("exactness when p <= n - k", ac5_exactness),
        ("rank-reduction invariants", ac6_reduction_invariants),
        ("Example 5.1 certificate", ac7_example51_certificate),
        ("Example 5.2 Jacobian ranks", ac8_example52_licq),
        ("numerical-range convexity", ac9_convexity),
        ("min-max consistency", ac10_minimax),
        ("assignment lower bound", ac11_assignment),
    ];
    let mut failed = 0;
    for (i, (title, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("AC{:<2} PASS  {title} [{secs:.2}s]: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("AC{:<2} FAIL  {title} [{secs:.2}s]: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
