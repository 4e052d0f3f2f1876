//! C ABI over `els-core`.
//!
//! Problems and solutions are opaque heap handles released with their
//! `*_free` function. Every fallible call returns an `ElsStatus`; on failure
//! `els_last_error_message` describes the most recent error on the calling
//! thread. Matrices cross the boundary row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use els_core::certificate::{certify_global, CertificateTolerances, Conclusion, Route};
use els_core::cr::{CrStatus, SolverConfig};
use els_core::error::ElsError;
use els_core::lift::exactness_conditions;
use els_core::linalg::DenseMatrix;
use els_core::problem::{parse_problem, ElsProblem, LinearConstraint};
use els_core::report::{solve_report, to_json, RunOptions, SolveReport};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElsStatus {
    Ok = 0,
    Infeasible = 1,
    NumericalFailure = 2,
    InvalidArgument = 3,
    ParseError = 4,
    NullPointer = 5,
    NotAvailable = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElsRoute {
    PsdMultiplier = 0,
    SecondOrder = 1,
    None = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElsConclusion {
    Global = 0,
    NotLocalMinimizer = 1,
    Inconclusive = 2,
}

/// Opaque problem instance.
pub struct ElsProblemHandle {
    inner: ElsProblem,
}

/// Opaque solve result.
pub struct ElsSolutionHandle {
    report: SolveReport,
    json: CString,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ElsOptions {
    pub tol: f64,
    pub rank_tol: f64,
    pub seed: u64,
    pub restarts: usize,
    pub with_oracle: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct ElsConditions {
    pub beck: bool,
    pub exact: bool,
    pub no_local_nonglobal: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct ElsVerdict {
    pub kkt_ok: bool,
    pub lambda_psd: bool,
    pub licq: bool,
    pub jacobian_rank: usize,
    pub second_order_ok: bool,
    pub global: bool,
    pub route: ElsRoute,
    pub conclusion: ElsConclusion,
    pub stationarity_residual: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn status_of(err: &ElsError) -> ElsStatus {
    match err {
        ElsError::Infeasible(_) | ElsError::NoFeasiblePoint { .. } => ElsStatus::Infeasible,
        ElsError::NumericalFailure(_) => ElsStatus::NumericalFailure,
        ElsError::Parse { .. } => ElsStatus::ParseError,
        _ => ElsStatus::InvalidArgument,
    }
}

fn fail(err: ElsError) -> ElsStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Runs `f`, converting panics into `ElsStatus::Panic`.
fn guard(f: impl FnOnce() -> ElsStatus) -> ElsStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic");
        ElsStatus::Panic
    })
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return ElsStatus::NullPointer;
        })+
    };
}

/// Reads a `rows x cols` row-major matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles.
unsafe fn read_matrix(data: *const f64, rows: usize, cols: usize) -> DenseMatrix {
    let slice = std::slice::from_raw_parts(data, rows * cols);
    DenseMatrix::from_row_slice(rows, cols, slice)
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn els_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn els_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn els_options_default() -> ElsOptions {
    let d = RunOptions::default();
    ElsOptions {
        tol: d.solver.tol,
        rank_tol: d.rank_tol,
        seed: d.solver.seed,
        restarts: d.restarts,
        with_oracle: d.with_oracle,
    }
}

/// Creates a problem with objective `A0` (`p x n`, row-major) and no
/// constraints.
///
/// # Safety
/// `a0` must point to `p * n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn els_problem_new(
    n: usize,
    p: usize,
    a0: *const f64,
    out: *mut *mut ElsProblemHandle,
) -> ElsStatus {
    guard(|| {
        non_null!(a0, out);
        match ElsProblem::new(n, p, read_matrix(a0, p, n), Vec::new()) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ElsProblemHandle { inner }));
                ElsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Parses a problem file.
///
/// # Safety
/// `text` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn els_problem_from_json(
    text: *const c_char,
    out: *mut *mut ElsProblemHandle,
) -> ElsStatus {
    guard(|| {
        non_null!(text, out);
        let Ok(s) = CStr::from_ptr(text).to_str() else {
            set_error("problem text is not UTF-8");
            return ElsStatus::ParseError;
        };
        match parse_problem(s) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(ElsProblemHandle { inner }));
                ElsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Appends `lower <= tr(A X) <= upper`; pass infinities for one-sided bounds.
///
/// # Safety
/// `problem` must be a live handle; `a` must point to `p * n` doubles.
#[no_mangle]
pub unsafe extern "C" fn els_problem_add_constraint(
    problem: *mut ElsProblemHandle,
    a: *const f64,
    lower: f64,
    upper: f64,
) -> ElsStatus {
    guard(|| {
        non_null!(problem, a);
        let h = &mut *problem;
        let (n, p) = (h.inner.n(), h.inner.p());
        match h.inner.with_constraint(LinearConstraint::new(read_matrix(a, p, n), lower, upper)) {
            Ok(next) => {
                h.inner = next;
                ElsStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `problem` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn els_problem_dims(
    problem: *const ElsProblemHandle,
    n: *mut usize,
    p: *mut usize,
    k: *mut usize,
) -> ElsStatus {
    guard(|| {
        non_null!(problem, n, p, k);
        let h = &*problem;
        *n = h.inner.n();
        *p = h.inner.p();
        *k = h.inner.k();
        ElsStatus::Ok
    })
}

/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn els_problem_free(problem: *mut ElsProblemHandle) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Relaxation, rank reduction, certificate and optional oracle. An
/// infeasible relaxation still yields a solution handle together with
/// `ElsStatus::Infeasible`.
///
/// # Safety
/// `problem` must be a live handle; `options` may be null for defaults;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn els_solve(
    problem: *const ElsProblemHandle,
    options: *const ElsOptions,
    out: *mut *mut ElsSolutionHandle,
) -> ElsStatus {
    guard(|| {
        non_null!(problem, out);
        let o = if options.is_null() { els_options_default() } else { *options };
        let opts = RunOptions {
            solver: SolverConfig {
                tol: o.tol,
                seed: o.seed,
                ..SolverConfig::default()
            },
            rank_tol: o.rank_tol,
            restarts: o.restarts,
            with_oracle: o.with_oracle,
            ..RunOptions::default()
        };
        let report = match solve_report(&(*problem).inner, &opts) {
            Ok(r) => r,
            Err(e) => return fail(e),
        };
        let status = match report.relaxation.status {
            CrStatus::Optimal => ElsStatus::Ok,
            CrStatus::Infeasible => {
                set_error("relaxation is infeasible");
                ElsStatus::Infeasible
            }
            CrStatus::NumericalFailure => {
                set_error("barrier solver failed");
                ElsStatus::NumericalFailure
            }
        };
        let json = CString::new(to_json(&report)).expect("JSON has no NUL");
        *out = Box::into_raw(Box::new(ElsSolutionHandle { report, json }));
        status
    })
}

/// Relaxation optimum, or NaN for a null handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn els_solution_relaxation_value(solution: *const ElsSolutionHandle) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.report.relaxation.value)
}

/// Whether a Stiefel point matching the relaxation value was recovered.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn els_solution_is_exact(solution: *const ElsSolutionHandle) -> bool {
    solution.as_ref().is_some_and(|s| s.report.exact)
}

/// Oracle value when the oracle ran and found a point.
///
/// # Safety
/// `solution` must be a live handle; `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn els_solution_oracle_value(
    solution: *const ElsSolutionHandle,
    value: *mut f64,
) -> ElsStatus {
    guard(|| {
        non_null!(solution, value);
        match &(*solution).report.oracle {
            Some(o) => {
                *value = o.value;
                ElsStatus::Ok
            }
            None => {
                set_error("no oracle value");
                ElsStatus::NotAvailable
            }
        }
    })
}

/// Copies the recovered `n x p` point row-major into `out[0..len]`.
///
/// # Safety
/// `solution` must be a live handle; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn els_solution_recovered_x(
    solution: *const ElsSolutionHandle,
    out: *mut f64,
    len: usize,
) -> ElsStatus {
    guard(|| {
        non_null!(solution, out);
        let Some(rec) = &(*solution).report.recovered else {
            set_error("no Stiefel point was recovered");
            return ElsStatus::NotAvailable;
        };
        let x = &rec.point.x;
        if len < x.len() {
            set_error(format!("buffer holds {len} values, need {}", x.len()));
            return ElsStatus::InvalidArgument;
        }
        let dst = std::slice::from_raw_parts_mut(out, x.len());
        for (i, row) in x.row_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                dst[i * x.ncols() + j] = *v;
            }
        }
        ElsStatus::Ok
    })
}

/// Full report as JSON, owned by the handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn els_solution_report_json(solution: *const ElsSolutionHandle) -> *const c_char {
    solution.as_ref().map_or(ptr::null(), |s| s.json.as_ptr())
}

/// # Safety
/// `solution` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn els_solution_free(solution: *mut ElsSolutionHandle) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Certificate for the `n x p` row-major point `x`, which must be feasible.
///
/// # Safety
/// `problem` must be a live handle; `x` must point to `n * p` doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn els_certify(
    problem: *const ElsProblemHandle,
    x: *const f64,
    out: *mut ElsVerdict,
) -> ElsStatus {
    guard(|| {
        non_null!(problem, x, out);
        let prob = &(*problem).inner;
        let x = read_matrix(x, prob.n(), prob.p());
        let v = match certify_global(prob, &x, &CertificateTolerances::default()) {
            Ok(v) => v,
            Err(e) => return fail(e),
        };
        *out = ElsVerdict {
            kkt_ok: v.kkt_ok,
            lambda_psd: v.lambda_psd,
            licq: v.licq,
            jacobian_rank: v.jacobian_rank,
            second_order_ok: v.second_order_ok,
            global: v.global,
            route: match v.route {
                Route::PsdMultiplier => ElsRoute::PsdMultiplier,
                Route::SecondOrder => ElsRoute::SecondOrder,
                Route::None => ElsRoute::None,
            },
            conclusion: match v.conclusion {
                Conclusion::Global => ElsConclusion::Global,
                Conclusion::NotLocalMinimizer => ElsConclusion::NotLocalMinimizer,
                Conclusion::Inconclusive => ElsConclusion::Inconclusive,
            },
            stationarity_residual: v.fit.stationarity_residual,
        };
        ElsStatus::Ok
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn els_check_conditions(
    n: usize,
    p: usize,
    k: usize,
    out: *mut ElsConditions,
) -> ElsStatus {
    guard(|| {
        non_null!(out);
        if p == 0 || p > n {
            set_error("requires 1 <= p <= n");
            return ElsStatus::InvalidArgument;
        }
        let c = exactness_conditions(n, p, k);
        *out = ElsConditions {
            beck: c.beck,
            exact: c.exact,
            no_local_nonglobal: c.no_local_nonglobal,
        };
        ElsStatus::Ok
    })
}
