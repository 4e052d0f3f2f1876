//! Report documents emitted by the command-line driver and the C API.

use std::time::Instant;

use serde::{Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::certificate::{certify_global, CertificateTolerances, CertificateVerdict};
use crate::cr::{solve_cr, CrSolution, CrStatus, SolverConfig};
use crate::error::{ElsError, Result};
use crate::lift::{exactness_conditions, lift_point, ExactnessConditions};
use crate::linalg::DenseMatrix;
use crate::minimax::{serialize_minimax, solve_minimax, solve_minimax_epigraph, MinimaxProblem, SubproblemResult};
use crate::oracle::{minimax_oracle, oracle_solve, OracleResult, OracleSource};
use crate::pipeline::{reduce_relaxation, PipelineRun};
use crate::problem::{matrix_rows, residuals, serialize_problem, ElsProblem, StiefelPoint};
use crate::reduction::{InexactReason, ReductionOutcome, ReductionStep};

/// Relative agreement between a recovered objective and the relaxation value
/// required to flag the relaxation exact.
pub const EXACT_TOL: f64 = 1e-5;

/// Serializes a matrix as row-major nested arrays.
pub(crate) fn ser_matrix<S: Serializer>(a: &DenseMatrix, s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(matrix_rows(a))
}

fn ser_opt_matrix<S: Serializer>(a: &Option<DenseMatrix>, s: S) -> Result<S::Ok, S::Error> {
    match a {
        Some(a) => ser_matrix(a, s),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProblemDigest {
    pub n: usize,
    pub p: usize,
    pub k: usize,
    /// SHA-256 of the canonical text form.
    pub sha256: String,
}

pub fn digest(prob: &ElsProblem) -> ProblemDigest {
    ProblemDigest {
        n: prob.n(),
        p: prob.p(),
        k: prob.k(),
        sha256: hex::encode(Sha256::digest(serialize_problem(prob).as_bytes())),
    }
}

fn digest_minimax(mm: &MinimaxProblem) -> ProblemDigest {
    let base = mm.base();
    ProblemDigest {
        n: base.n(),
        p: base.p(),
        k: base.k(),
        sha256: hex::encode(Sha256::digest(serialize_minimax(mm).as_bytes())),
    }
}

/// Everything that shapes a run, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunOptions {
    pub solver: SolverConfig,
    pub rank_tol: f64,
    pub restarts: usize,
    pub with_oracle: bool,
    pub certificate: CertificateTolerances,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            solver: SolverConfig::default(),
            rank_tol: 1e-8,
            restarts: 20,
            with_oracle: false,
            certificate: CertificateTolerances::default(),
        }
    }
}

impl RunOptions {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if !(self.rank_tol > 0.0 && self.rank_tol.is_finite()) {
            return Err(ElsError::validation("rank_tol", "must be positive and finite"));
        }
        if self.restarts == 0 {
            return Err(ElsError::validation("restarts", "must be at least 1"));
        }
        Ok(())
    }
}

/// Wall-clock milliseconds per stage; the only field allowed to differ
/// between identical runs.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relax_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduce_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub certify_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_ms: Option<f64>,
    pub total_ms: f64,
}

fn millis(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxationSummary {
    pub status: CrStatus,
    pub value: f64,
    pub gap_estimate: f64,
    pub phase1_value: f64,
    pub relaxation: f64,
    pub newton_steps: usize,
    /// `rank(Y)` of the lifted optimum.
    pub lifted_rank: Option<usize>,
    #[serde(serialize_with = "ser_matrix")]
    pub x: DenseMatrix,
}

impl RelaxationSummary {
    fn new(sol: &CrSolution, rank_tol: f64) -> Self {
        let lifted_rank = (sol.status == CrStatus::Optimal)
            .then(|| lift_point(&sol.x, rank_tol).ok().map(|l| l.rank))
            .flatten();
        Self {
            status: sol.status,
            value: sol.value,
            gap_estimate: sol.gap_estimate,
            phase1_value: sol.phase1_value,
            relaxation: sol.relaxation,
            newton_steps: sol.newton_steps,
            lifted_rank,
            x: sol.x.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionKind {
    Exact,
    Inexact,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReductionSummary {
    pub outcome: ReductionKind,
    pub reason: Option<InexactReason>,
    pub initial_rank: usize,
    pub final_rank: usize,
    pub trace: Vec<ReductionStep>,
}

impl ReductionSummary {
    fn new(outcome: &ReductionOutcome) -> Self {
        match outcome {
            ReductionOutcome::Exact(r) => Self {
                outcome: ReductionKind::Exact,
                reason: None,
                initial_rank: r.initial_rank,
                final_rank: r.lifted.rank,
                trace: r.steps.clone(),
            },
            ReductionOutcome::Inexact(r) => Self {
                outcome: ReductionKind::Inexact,
                reason: Some(r.reason),
                initial_rank: r.initial_rank,
                final_rank: r.rank,
                trace: r.steps.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PointSummary {
    #[serde(serialize_with = "ser_matrix")]
    pub x: DenseMatrix,
    pub objective: f64,
    pub orth_residual: f64,
    pub lin_residuals: Vec<f64>,
}

impl PointSummary {
    pub fn new(prob: &ElsProblem, pt: &StiefelPoint) -> Self {
        Self {
            objective: prob.objective(&pt.x),
            x: pt.x.clone(),
            orth_residual: pt.orth_residual,
            lin_residuals: pt.lin_residuals.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RecoveredSummary {
    #[serde(flatten)]
    pub point: PointSummary,
    /// `|tr(A0 X) - relaxation value|`.
    pub value_gap: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub value: f64,
    pub source: OracleSource,
    pub index: usize,
    pub restarts: usize,
    pub seed: u64,
    pub orth_residual: f64,
    pub max_lin_residual: f64,
    #[serde(serialize_with = "ser_matrix")]
    pub x: DenseMatrix,
}

impl OracleSummary {
    fn new(r: &OracleResult, restarts: usize, seed: u64) -> Self {
        Self {
            value: r.value,
            source: r.source,
            index: r.index,
            restarts,
            seed,
            orth_residual: r.orth_residual,
            max_lin_residual: r.max_lin_residual,
            x: r.x.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub command: &'static str,
    pub problem: ProblemDigest,
    pub conditions: ExactnessConditions,
    pub relaxation: RelaxationSummary,
    pub reduction: Option<ReductionSummary>,
    pub recovered: Option<RecoveredSummary>,
    /// Recovered objective matches the relaxation value.
    pub exact: bool,
    pub certificate: Option<CertificateVerdict>,
    /// Oracle value, or the reason no feasible point was found.
    pub oracle: Option<OracleSummary>,
    pub oracle_error: Option<String>,
    pub config: RunOptions,
    pub timings: Timings,
}

/// Certificate for a candidate that may miss the feasibility gate.
fn try_certify(
    prob: &ElsProblem,
    x: &DenseMatrix,
    tol: &CertificateTolerances,
) -> Result<Option<CertificateVerdict>> {
    match certify_global(prob, x, tol) {
        Ok(v) => Ok(Some(v)),
        Err(ElsError::InvalidInput(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn run_oracle(
    prob: &ElsProblem,
    opts: &RunOptions,
    timings: &mut Timings,
) -> Result<(Option<OracleSummary>, Option<String>)> {
    if !opts.with_oracle {
        return Ok((None, None));
    }
    let start = Instant::now();
    let res = oracle_solve(prob, opts.restarts, opts.solver.seed);
    timings.oracle_ms = Some(millis(start));
    match res {
        Ok(r) => Ok((Some(OracleSummary::new(&r, opts.restarts, opts.solver.seed)), None)),
        Err(e @ ElsError::NoFeasiblePoint { .. }) => Ok((None, Some(e.to_string()))),
        Err(e) => Err(e),
    }
}

/// Relaxation, rank reduction, certificate and (optionally) oracle.
pub fn solve_report(prob: &ElsProblem, opts: &RunOptions) -> Result<SolveReport> {
    opts.validate()?;
    let total = Instant::now();
    let mut timings = Timings::default();

    let start = Instant::now();
    let relaxation = solve_cr(prob, &opts.solver)?;
    timings.relax_ms = Some(millis(start));
    let start = Instant::now();
    let (reduction, recovered_pt) = reduce_relaxation(prob, &relaxation, opts.rank_tol)?;
    timings.reduce_ms = Some(millis(start));
    let run = PipelineRun {
        relaxation,
        reduction,
        recovered: recovered_pt,
    };

    let value = run.relaxation.value;
    let recovered = run.recovered.as_ref().map(|pt| {
        let point = PointSummary::new(prob, pt);
        let value_gap = (point.objective - value).abs();
        RecoveredSummary {
            exact: value_gap <= EXACT_TOL * (1.0 + value.abs()),
            point,
            value_gap,
        }
    });

    let start = Instant::now();
    let certificate = match &run.recovered {
        Some(pt) => try_certify(prob, &pt.x, &opts.certificate)?,
        None => None,
    };
    timings.certify_ms = Some(millis(start));

    let (oracle, oracle_error) = run_oracle(prob, opts, &mut timings)?;
    timings.total_ms = millis(total);
    Ok(SolveReport {
        command: "solve",
        problem: digest(prob),
        conditions: exactness_conditions(prob.n(), prob.p(), prob.k()),
        relaxation: RelaxationSummary::new(&run.relaxation, opts.rank_tol),
        reduction: run.reduction.as_ref().map(ReductionSummary::new),
        exact: recovered.as_ref().is_some_and(|r| r.exact),
        recovered,
        certificate,
        oracle,
        oracle_error,
        config: opts.clone(),
        timings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RelaxReport {
    pub command: &'static str,
    pub problem: ProblemDigest,
    pub conditions: ExactnessConditions,
    pub relaxation: RelaxationSummary,
    pub config: RunOptions,
    pub timings: Timings,
}

pub fn relax_report(prob: &ElsProblem, opts: &RunOptions) -> Result<RelaxReport> {
    opts.validate()?;
    let start = Instant::now();
    let sol = solve_cr(prob, &opts.solver)?;
    let relax_ms = millis(start);
    Ok(RelaxReport {
        command: "relax",
        problem: digest(prob),
        conditions: exactness_conditions(prob.n(), prob.p(), prob.k()),
        relaxation: RelaxationSummary::new(&sol, opts.rank_tol),
        config: opts.clone(),
        timings: Timings {
            relax_ms: Some(relax_ms),
            total_ms: relax_ms,
            ..Timings::default()
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CertifyReport {
    pub command: &'static str,
    pub problem: ProblemDigest,
    pub point: PointSummary,
    pub verdict: CertificateVerdict,
    pub config: CertificateTolerances,
    pub timings: Timings,
}

/// Errors with `InvalidInput` when the point is not feasible.
pub fn certify_report(prob: &ElsProblem, x: &DenseMatrix, tol: &CertificateTolerances) -> Result<CertifyReport> {
    let start = Instant::now();
    let pt = residuals(prob, x)?;
    let verdict = certify_global(prob, x, tol)?;
    let ms = millis(start);
    Ok(CertifyReport {
        command: "certify",
        problem: digest(prob),
        point: PointSummary::new(prob, &pt),
        verdict,
        config: tol.clone(),
        timings: Timings {
            certify_ms: Some(ms),
            total_ms: ms,
            ..Timings::default()
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub command: &'static str,
    pub problem: ProblemDigest,
    pub oracle: OracleSummary,
    pub config: RunOptions,
    pub timings: Timings,
}

pub fn oracle_report(prob: &ElsProblem, opts: &RunOptions) -> Result<OracleReport> {
    opts.validate()?;
    let start = Instant::now();
    let r = oracle_solve(prob, opts.restarts, opts.solver.seed)?;
    let ms = millis(start);
    Ok(OracleReport {
        command: "oracle",
        problem: digest(prob),
        oracle: OracleSummary::new(&r, opts.restarts, opts.solver.seed),
        config: opts.clone(),
        timings: Timings {
            oracle_ms: Some(ms),
            total_ms: ms,
            ..Timings::default()
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MinimaxReport {
    pub command: &'static str,
    pub problem: ProblemDigest,
    pub m: usize,
    pub value: f64,
    pub piece: usize,
    #[serde(serialize_with = "ser_matrix")]
    pub x: DenseMatrix,
    pub stiefel: bool,
    pub subproblems: Vec<SubproblemResult>,
    /// Single-program value `min t` with `t` above every piece.
    pub epigraph_value: Option<f64>,
    pub oracle_value: Option<f64>,
    #[serde(serialize_with = "ser_opt_matrix")]
    pub oracle_x: Option<DenseMatrix>,
    pub config: RunOptions,
    pub timings: Timings,
}

pub fn minimax_report(mm: &MinimaxProblem, opts: &RunOptions) -> Result<MinimaxReport> {
    opts.validate()?;
    let total = Instant::now();
    let mut timings = Timings::default();
    let start = Instant::now();
    let sol = solve_minimax(mm, &opts.solver, opts.rank_tol)?;
    let epi = solve_minimax_epigraph(mm, &opts.solver)?;
    timings.relax_ms = Some(millis(start));
    let (oracle_value, oracle_x) = if opts.with_oracle {
        let start = Instant::now();
        let r = minimax_oracle(mm, opts.restarts, opts.solver.seed);
        timings.oracle_ms = Some(millis(start));
        match r {
            Ok(r) => (Some(r.value), Some(r.x)),
            Err(ElsError::NoFeasiblePoint { .. }) => (None, None),
            Err(e) => return Err(e),
        }
    } else {
        (None, None)
    };
    timings.total_ms = millis(total);
    Ok(MinimaxReport {
        command: "minimax",
        problem: digest_minimax(mm),
        m: mm.m(),
        value: sol.value,
        piece: sol.piece,
        x: sol.x,
        stiefel: sol.stiefel,
        subproblems: sol.subproblems,
        epigraph_value: (epi.status == CrStatus::Optimal).then_some(epi.value),
        oracle_value,
        oracle_x,
        config: opts.clone(),
        timings,
    })
}

/// JSON text with a trailing newline.
pub fn to_json<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{build_fixture, Fixture};

    fn fixture(f: Fixture) -> ElsProblem {
        build_fixture(&f).unwrap().into_els().unwrap()
    }

    fn strip_timings(v: &mut serde_json::Value) {
        v.as_object_mut().unwrap().remove("timings");
    }

    #[test]
    fn example41_flags_inexactness() {
        let opts = RunOptions {
            with_oracle: true,
            ..RunOptions::default()
        };
        let r = solve_report(&fixture(Fixture::Example41), &opts).unwrap();
        assert!(r.relaxation.value.abs() <= 1e-6);
        assert!(!r.exact);
        assert!(r.recovered.is_none());
        assert!((r.oracle.unwrap().value - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn exact_instance_is_flagged_exact() {
        let a0 = DenseMatrix::from_row_slice(1, 3, &[1.0, -2.0, 0.5]);
        let prob = ElsProblem::new(3, 1, a0, vec![]).unwrap();
        let r = solve_report(&prob, &RunOptions::default()).unwrap();
        assert!(r.exact);
        let rec = r.recovered.unwrap();
        assert!(rec.value_gap <= 1e-6);
        assert!(r.certificate.unwrap().global);
    }

    #[test]
    fn reports_are_reproducible_apart_from_timings() {
        let prob = fixture(Fixture::Example51);
        let opts = RunOptions {
            with_oracle: true,
            restarts: 4,
            ..RunOptions::default()
        };
        let mut a = serde_json::to_value(solve_report(&prob, &opts).unwrap()).unwrap();
        let mut b = serde_json::to_value(solve_report(&prob, &opts).unwrap()).unwrap();
        strip_timings(&mut a);
        strip_timings(&mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn digest_tracks_content() {
        let a = digest(&fixture(Fixture::Example41));
        let b = digest(&fixture(Fixture::Example51));
        assert_eq!(a.sha256.len(), 64);
        assert_ne!(a.sha256, b.sha256);
        assert_eq!(a.sha256, digest(&fixture(Fixture::Example41)).sha256);
    }

    #[test]
    fn invalid_options_rejected() {
        let opts = RunOptions {
            restarts: 0,
            ..RunOptions::default()
        };
        assert!(solve_report(&fixture(Fixture::Example41), &opts).is_err());
    }
}
