//! Verification experiments: convergence-rate runs on desk-scale instances and
//! randomized equivalence checks against brute-force references.
//!
//! Each suite yields one [`Outcome`] per criterion with the measured value, the
//! threshold and the runtime. [`Verifier`] memoizes the expensive O-AW runs so the
//! drop-step lemma check reuses them.

use std::fmt;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::atoms::{ActiveSet, Atom, Sign};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::gradients::{
    ClassificationLoss, Features, GradientOracle, LabeledVector, LassoSample, LassoStats,
    LinkFunction, McSample, McStats, ReplayStats, Sample,
};
use crate::linalg::spectral_norm;
use crate::lmo::{ConstraintSet, PowerIterConfig};
use crate::metrics::{
    grad_error, loglog_fit, loglog_slope, min_gap_tail, Cadence, GradNorm, SlopeFit, Trace,
};
use crate::params::{Gradient, Params, Shape};
use crate::schedule::StepSchedule;
use crate::solvers::{run, RunOptions, SolverKind};
use crate::workloads::{
    gen_classification, gen_fixed_design_lasso, gen_mc, gen_random_design_lasso, lasso_with_design,
    ClassificationSpec, ClassifierConstraint, FStar, Workload, REFERENCE_BUDGET,
};

pub const DEFAULT_SEED: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Suite {
    InteriorLasso,
    BoundaryLasso,
    GradError,
    NonconvexGap,
    DropLemma,
    ActiveSet,
    Lmo,
    Aggregators,
    SolverReference,
    Mc,
}

impl Suite {
    pub const ALL: [Suite; 10] = [
        Suite::InteriorLasso,
        Suite::BoundaryLasso,
        Suite::GradError,
        Suite::NonconvexGap,
        Suite::DropLemma,
        Suite::ActiveSet,
        Suite::Lmo,
        Suite::Aggregators,
        Suite::SolverReference,
        Suite::Mc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::InteriorLasso => "interior-lasso",
            Suite::BoundaryLasso => "boundary-lasso",
            Suite::GradError => "grad-error",
            Suite::NonconvexGap => "nonconvex-gap",
            Suite::DropLemma => "drop-lemma",
            Suite::ActiveSet => "active-set",
            Suite::Lmo => "lmo",
            Suite::Aggregators => "aggregators",
            Suite::SolverReference => "solver-reference",
            Suite::Mc => "mc",
        }
    }

    /// Criterion number in the acceptance list.
    pub fn id(self) -> u8 {
        Suite::ALL.iter().position(|s| *s == self).expect("listed") as u8 + 1
    }

    pub fn from_name(name: &str) -> Result<Suite> {
        Suite::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown suite '{name}'; available: all, {}",
                    Suite::ALL.map(Suite::name).join(", ")
                ))
            })
    }

    /// Wall-clock budget for the suite.
    pub fn budget(self) -> Duration {
        Duration::from_secs(match self {
            Suite::InteriorLasso | Suite::Mc => 60,
            Suite::BoundaryLasso | Suite::NonconvexGap => 120,
            Suite::GradError => 30,
            Suite::Lmo | Suite::Aggregators => 10,
            // Reuses the runs of suites 2 and 4.
            Suite::DropLemma => 240,
            Suite::ActiveSet | Suite::SolverReference => 10,
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub id: u8,
    pub suite: &'static str,
    pub passed: bool,
    pub measured: String,
    pub threshold: String,
    pub elapsed_secs: f64,
    pub budget_secs: f64,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:>2} {:<17} {} | want {} | {:.1}s of {:.0}s",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.suite,
            self.measured,
            self.threshold,
            self.elapsed_secs,
            self.budget_secs
        )
    }
}

fn outcome(
    suite: Suite,
    ok: bool,
    measured: String,
    threshold: String,
    elapsed: Duration,
) -> Outcome {
    let budget = suite.budget();
    Outcome {
        id: suite.id(),
        suite: suite.name(),
        passed: ok && elapsed <= budget,
        measured,
        threshold,
        elapsed_secs: elapsed.as_secs_f64(),
        budget_secs: budget.as_secs_f64(),
    }
}

/// Desk-scale fixed-design LASSO shared by suites 1 and 2.
pub const LASSO_N: usize = 100;
pub const LASSO_M: usize = 40;
pub const LASSO_SPARSITY: f64 = 0.1;
pub const LASSO_SIGMA_W: f64 = 10.0;
pub const LASSO_HORIZON: usize = 100_000;
pub const LASSO_WINDOW: (f64, f64) = (1e3, 1e5);

pub const GRAD_ERROR_N: usize = 30;
pub const GRAD_ERROR_M: usize = 10;
pub const GRAD_ERROR_SEEDS: u64 = 8;
pub const GRAD_ERROR_HORIZON: usize = 100_000;

pub const NONCONVEX_SIDE: usize = 10;
pub const NONCONVEX_RANK: usize = 3;
pub const NONCONVEX_FLIP: f64 = 0.25;
pub const NONCONVEX_HORIZONS: [usize; 3] = [1 << 10, 1 << 12, 1 << 14];

/// Power iteration used for the trace-LMO accuracy check. Random matrices with
/// `σ₂/σ₁` above 0.999 need ~10⁴ iterations to meet the residual tolerance.
pub const LMO_CHECK_POWER: PowerIterConfig = PowerIterConfig {
    tol: 1e-8,
    max_iter: 20_000,
    seed: 0x5eed,
};

pub const MC_ROWS: usize = 20;
pub const MC_COLS: usize = 50;
pub const MC_RANK: usize = 3;
pub const MC_NOISE_VAR: f64 = 3.0;
pub const MC_HORIZON: usize = 10_000;
pub const MC_WINDOW: (f64, f64) = (1e2, 1e4);

pub struct BoundaryRuns {
    pub workload: Workload,
    pub ofw: Trace,
    pub oaw: Trace,
    pub elapsed: Duration,
}

pub struct NonconvexRuns {
    pub ofw: Trace,
    pub oaw: Trace,
    pub elapsed: Duration,
}

/// Runs suites, sharing the expensive runs between them.
pub struct Verifier {
    seed: u64,
    boundary: OnceLock<Result<BoundaryRuns>>,
    nonconvex: OnceLock<Result<NonconvexRuns>>,
}

fn share<T>(cell: &Result<T>) -> Result<&T> {
    cell.as_ref().map_err(Clone::clone)
}

fn every(kind: SolverKind, schedule: StepSchedule, horizon: usize) -> RunOptions {
    RunOptions {
        cadence: Cadence::Every,
        ..RunOptions::new(kind, schedule, horizon)
    }
}

fn play(w: &Workload, opts: &RunOptions, grad_errors: bool) -> Result<Trace> {
    run(
        opts,
        &mut w.oracle(),
        &w.constraint,
        w.stream(),
        Some(&w.evaluator(grad_errors)),
    )
}

fn fmt_fit(fit: &SlopeFit) -> String {
    format!(
        "slope {:.3} (r2 {:.3}, {} pts)",
        fit.slope, fit.r2, fit.points
    )
}

impl Default for Verifier {
    fn default() -> Self {
        Self::new(DEFAULT_SEED)
    }
}

impl Verifier {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            boundary: OnceLock::new(),
            nonconvex: OnceLock::new(),
        }
    }

    pub fn run_all(&self) -> Vec<Outcome> {
        Suite::ALL.iter().map(|&s| self.run(s)).collect()
    }

    /// Runs one suite; an internal error is reported as a failed outcome.
    pub fn run(&self, suite: Suite) -> Outcome {
        let start = Instant::now();
        let result = match suite {
            Suite::InteriorLasso => self.interior_lasso(),
            Suite::BoundaryLasso => self.boundary_lasso(),
            Suite::GradError => self.grad_error(),
            Suite::NonconvexGap => self.nonconvex_gap(),
            Suite::DropLemma => self.drop_lemma(),
            Suite::ActiveSet => self.active_set(),
            Suite::Lmo => self.lmo(),
            Suite::Aggregators => self.aggregators(),
            Suite::SolverReference => self.solver_reference(),
            Suite::Mc => self.mc(),
        };
        result.unwrap_or_else(|e| {
            outcome(
                suite,
                false,
                format!("error: {e}"),
                "no error".into(),
                start.elapsed(),
            )
        })
    }

    fn interior_lasso(&self) -> Result<Outcome> {
        let start = Instant::now();
        let w = gen_fixed_design_lasso(
            LASSO_N,
            LASSO_M,
            LASSO_SPARSITY,
            LASSO_SIGMA_W,
            1.1,
            self.seed,
        )?;
        let trace = play(
            &w,
            &every(SolverKind::Ofw, StepSchedule::ANYTIME, LASSO_HORIZON),
            false,
        )?;
        let fit = loglog_slope(&trace.h_series(), LASSO_WINDOW)?;
        Ok(outcome(
            Suite::InteriorLasso,
            fit.slope <= -0.80,
            format!("O-FW h_t {}", fmt_fit(&fit)),
            "slope <= -0.80 over t in [1e3, 1e5]".into(),
            start.elapsed(),
        ))
    }

    pub fn boundary_runs(&self) -> Result<&BoundaryRuns> {
        share(self.boundary.get_or_init(|| {
            let start = Instant::now();
            let w = gen_fixed_design_lasso(
                LASSO_N,
                LASSO_M,
                LASSO_SPARSITY,
                LASSO_SIGMA_W,
                0.15,
                self.seed,
            )?
            .with_reference(REFERENCE_BUDGET)?;
            let ofw = play(
                &w,
                &every(SolverKind::Ofw, StepSchedule::ANYTIME, LASSO_HORIZON),
                false,
            )?;
            let oaw = play(
                &w,
                &every(SolverKind::Oaw, StepSchedule::ANYTIME, LASSO_HORIZON),
                false,
            )?;
            Ok(BoundaryRuns {
                workload: w,
                ofw,
                oaw,
                elapsed: start.elapsed(),
            })
        }))
    }

    fn boundary_lasso(&self) -> Result<Outcome> {
        let runs = self.boundary_runs()?;
        let Some(FStar::Reference { value, certificate }) = runs.workload.f_star else {
            return Err(Error::InvariantViolation(
                "boundary workload lacks a reference optimum".into(),
            ));
        };
        let relative_cert = certificate / value.abs();
        let fit = loglog_slope(&runs.oaw.h_series(), LASSO_WINDOW)?;
        let ofw_fit = loglog_slope(&runs.ofw.h_series(), LASSO_WINDOW)?;
        let (h_aw, h_fw) = match (runs.oaw.final_h(), runs.ofw.final_h()) {
            (Some(a), Some(f)) => (a, f),
            _ => return Err(Error::InvariantViolation("missing final h_T".into())),
        };
        let ok = relative_cert <= 1e-5 && fit.slope <= -0.80 && h_aw <= 1.5 * h_fw;
        Ok(outcome(
            Suite::BoundaryLasso,
            ok,
            format!(
                "cert/f* {relative_cert:.2e}; O-AW {}; O-FW slope {:.3}; h_T O-AW {h_aw:.3e} vs O-FW {h_fw:.3e} (ratio {:.3})",
                fmt_fit(&fit),
                ofw_fit.slope,
                h_aw / h_fw
            ),
            "cert/f* <= 1e-5, O-AW slope <= -0.80, h_T(O-AW) <= 1.5 h_T(O-FW)".into(),
            runs.elapsed,
        ))
    }

    fn grad_error(&self) -> Result<Outcome> {
        let start = Instant::now();
        let checkpoints = log_checkpoints(100, GRAD_ERROR_HORIZON, 1.2);
        let per_seed = exec::map_range(Execution::default(), GRAD_ERROR_SEEDS as usize, |i| {
            grad_error_curve(self.seed.wrapping_mul(1000) + i as u64, &checkpoints)
        });
        let mut mean = vec![0.0; checkpoints.len()];
        for curve in per_seed {
            for (m, e) in mean.iter_mut().zip(curve?) {
                *m += e / GRAD_ERROR_SEEDS as f64;
            }
        }
        let series: Vec<(f64, f64)> = checkpoints.iter().map(|&t| t as f64).zip(mean).collect();
        let fit = loglog_slope(&series, (1e2, 1e5))?;
        Ok(outcome(
            Suite::GradError,
            fit.slope > -0.65 && fit.slope < -0.35,
            format!(
                "mean over {GRAD_ERROR_SEEDS} seeds of sup-norm error {}",
                fmt_fit(&fit)
            ),
            "slope in (-0.65, -0.35) over t in [1e2, 1e5]".into(),
            start.elapsed(),
        ))
    }

    pub fn nonconvex_runs(&self) -> Result<&NonconvexRuns> {
        share(self.nonconvex.get_or_init(|| {
            let start = Instant::now();
            let horizon = *NONCONVEX_HORIZONS.last().expect("non-empty");
            let spec = ClassificationSpec {
                m1: NONCONVEX_SIDE,
                m2: NONCONVEX_SIDE,
                rank: NONCONVEX_RANK,
                n_train: horizon,
                flip_frac: NONCONVEX_FLIP,
                loss: ClassificationLoss::default(),
                constraint: ClassifierConstraint::L1 { radius: 1.0 },
                seed: self.seed,
            };
            let w = gen_classification(&spec)?;
            let schedule = StepSchedule::Power { alpha: 0.75 };
            let play = |kind| {
                let opts = RunOptions::new(kind, schedule, horizon);
                run(&opts, &mut w.oracle(), &w.constraint, w.stream(), None)
            };
            Ok(NonconvexRuns {
                ofw: play(SolverKind::Ofw)?,
                oaw: play(SolverKind::Oaw)?,
                elapsed: start.elapsed(),
            })
        }))
    }

    fn nonconvex_gap(&self) -> Result<Outcome> {
        let runs = self.nonconvex_runs()?;
        let mut ok = true;
        let mut parts = Vec::new();
        for (label, trace) in [("O-FW", &runs.ofw), ("O-AW", &runs.oaw)] {
            let tails = NONCONVEX_HORIZONS
                .iter()
                .map(|&t| Ok((t as f64, min_gap_tail(&trace.records, t)?)))
                .collect::<Result<Vec<_>>>()?;
            let fit = loglog_fit(&tails)?;
            let monotone = tails.windows(2).all(|p| p[1].1 <= p[0].1);
            ok &= monotone && fit.slope <= -0.10;
            parts.push(format!(
                "{label} tails [{}] slope {:.3}",
                tails
                    .iter()
                    .map(|p| format!("{:.2e}", p.1))
                    .collect::<Vec<_>>()
                    .join(", "),
                fit.slope
            ));
        }
        Ok(outcome(
            Suite::NonconvexGap,
            ok,
            parts.join("; "),
            "tail minima non-increasing over T = 2^10, 2^12, 2^14 and slope <= -0.10".into(),
            runs.elapsed,
        ))
    }

    fn drop_lemma(&self) -> Result<Outcome> {
        let start = Instant::now();
        let boundary = self.boundary_runs()?;
        let nonconvex = self.nonconvex_runs()?;
        let traces = [&boundary.oaw, &nonconvex.oaw];
        let violations: usize = traces.iter().map(|t| t.drop_lemma_violations).sum();
        let steps: usize = traces.iter().map(|t| t.records.len()).sum();
        let drops: usize = traces
            .iter()
            .map(|t| t.count(crate::solvers::StepKind::Drop))
            .sum();
        Ok(outcome(
            Suite::DropLemma,
            violations == 0 && steps > 0,
            format!("{violations} violations over {steps} O-AW steps ({drops} drop steps)"),
            "0 violations of n_t >= ceil(t/2)".into(),
            start.elapsed(),
        ))
    }

    fn active_set(&self) -> Result<Outcome> {
        let start = Instant::now();
        let report = active_set_check(10_000, self.seed)?;
        Ok(outcome(
            Suite::ActiveSet,
            report.violations == 0,
            format!(
                "{} violations over {} updates ({} FW, {} AW, {} drop); max sum error {:.1e}, max reconstruction error {:.1e}",
                report.violations,
                report.updates,
                report.fw,
                report.away,
                report.drops,
                report.max_sum_error,
                report.max_reconstruction_error
            ),
            "0 violations (weights > 0, |sum - 1| <= 1e-9, reconstruction <= 1e-7, drop removes atom)".into(),
            start.elapsed(),
        ))
    }

    fn lmo(&self) -> Result<Outcome> {
        let start = Instant::now();
        let default = PowerIterConfig::default();
        let l1 = lmo_check(LmoVariant::L1, 1000, self.seed, &default)?;
        let poly = lmo_check(LmoVariant::Polytope, 1000, self.seed, &default)?;
        let trace_variant = LmoVariant::Trace {
            max_rows: 20,
            max_cols: 15,
        };
        let trace_default = lmo_check(trace_variant, 1000, self.seed, &default)?;
        let trace = lmo_check(trace_variant, 1000, self.seed, &LMO_CHECK_POWER)?;
        let ok = l1.mismatches == 0 && poly.mismatches == 0 && trace.max_relative_error <= 1e-6;
        Ok(outcome(
            Suite::Lmo,
            ok,
            format!(
                "l1 {}/{} mismatches, polytope {}/{} mismatches, trace max rel err {:.1e} with max_iter {} \
                 ({:.1e} and {} unconverged with the default {})",
                l1.mismatches,
                l1.trials,
                poly.mismatches,
                poly.trials,
                trace.max_relative_error,
                LMO_CHECK_POWER.max_iter,
                trace_default.max_relative_error,
                trace_default.unconverged,
                default.max_iter
            ),
            "exact l1/vertex agreement; trace <= 1e-6 relative".into(),
            start.elapsed(),
        ))
    }

    fn aggregators(&self) -> Result<Outcome> {
        let start = Instant::now();
        let report = aggregator_check(50, self.seed)?;
        let ok = report.max_replay_error <= 1e-10 && report.max_fd_relative_error <= 1e-4;
        Ok(outcome(
            Suite::Aggregators,
            ok,
            format!(
                "max |oracle - naive| {:.1e}; max finite-difference rel err {:.1e}",
                report.max_replay_error, report.max_fd_relative_error
            ),
            "<= 1e-10 and <= 1e-4".into(),
            start.elapsed(),
        ))
    }

    fn solver_reference(&self) -> Result<Outcome> {
        let start = Instant::now();
        let err = solver_reference_check(10, self.seed)?;
        Ok(outcome(
            Suite::SolverReference,
            err <= 1e-12,
            format!("max coordinate difference {err:.1e}"),
            "<= 1e-12".into(),
            start.elapsed(),
        ))
    }

    fn mc(&self) -> Result<Outcome> {
        let start = Instant::now();
        let w = gen_mc(
            MC_ROWS,
            MC_COLS,
            MC_RANK,
            MC_NOISE_VAR,
            1.1,
            LinkFunction::Gaussian,
            self.seed,
        )?;
        let trace = play(
            &w,
            &every(SolverKind::Ofw, StepSchedule::ANYTIME, MC_HORIZON),
            false,
        )?;
        let fit = loglog_slope(&trace.h_series(), MC_WINDOW)?;
        Ok(outcome(
            Suite::Mc,
            fit.slope <= -0.70,
            format!(
                "O-FW h_t {}; {} of {} LMO calls unconverged",
                fmt_fit(&fit),
                trace.lmo_unconverged,
                trace.records.len()
            ),
            "slope <= -0.70 over t in [1e2, 1e4]".into(),
            start.elapsed(),
        ))
    }
}

/// Integer checkpoints growing geometrically by `ratio` from `first` to `last` (inclusive).
pub fn log_checkpoints(first: usize, last: usize, ratio: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut x = first.max(1) as f64;
    while (x.round() as usize) < last {
        let t = x.round() as usize;
        if out.last() != Some(&t) {
            out.push(t);
        }
        x *= ratio;
    }
    out.push(last);
    out
}

/// Sup-norm error of the aggregated gradient at `θ = 0` on the random-design LASSO.
fn grad_error_curve(seed: u64, checkpoints: &[usize]) -> Result<Vec<f64>> {
    let w = gen_random_design_lasso(GRAD_ERROR_N, GRAD_ERROR_M, 0.1, 1.0, 1.1, seed)?;
    let probe = Params::zeros(w.shape());
    let exact = Gradient::Dense(w.gradient(&probe).expect("exact gradient"));
    let mut oracle = w.oracle();
    let mut stream = w.stream();
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut seen = 0;
    for &t in checkpoints {
        while seen < t {
            let s = stream.next().ok_or(Error::NoData)?;
            oracle.observe(&s)?;
            seen += 1;
        }
        out.push(grad_error(
            &oracle.gradient(&probe)?,
            &exact,
            GradNorm::Inf,
        )?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ActiveSetReport {
    pub updates: usize,
    pub fw: usize,
    pub away: usize,
    pub drops: usize,
    pub violations: usize,
    pub max_sum_error: f64,
    pub max_reconstruction_error: f64,
}

/// Random FW / away / drop updates on ℓ1-ball atoms in R⁶. After each update the
/// reconstructed point is compared with the direct update of the point before it.
/// Sequences restart every 100 updates.
///
/// Away steps use `γ ≤ min(γ_max, 1)`, the range O-AW itself produces; drops use `γ_max`.
pub fn active_set_check(updates: usize, seed: u64) -> Result<ActiveSetReport> {
    const DIM: usize = 6;
    const RESTART: usize = 100;
    let shape = Shape::Vector(DIM);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = ActiveSetReport::default();
    let mut set = ActiveSet::new();
    let random_atom = |rng: &mut ChaCha8Rng| Atom::SignedBasis {
        index: rng.random_range(0..DIM),
        sign: if rng.random_bool(0.5) {
            Sign::Plus
        } else {
            Sign::Minus
        },
        radius: 1.0,
    };

    for i in 0..updates {
        if i % RESTART == 0 {
            set = ActiveSet::new();
            set.apply_fw_step(random_atom(&mut rng), 1.0)?;
        }
        let before = set.point(shape)?.into_inner();
        let choice = rng.random_range(0..3);
        let mut dropped = None;
        let expected: Array1<f64>;
        if choice == 0 || set.len() < 2 {
            let atom = random_atom(&mut rng);
            let gamma = rng.random_range(0.01..1.0);
            let target = atom.to_params(shape)?.into_inner();
            set.apply_fw_step(atom, gamma)?;
            expected = (1.0 - gamma) * &before + gamma * &target;
            report.fw += 1;
        } else {
            let pick = rng.random_range(0..set.len());
            let key = *set.iter().nth(pick).expect("in range").0;
            let target = set
                .get(&key)
                .expect("active")
                .atom
                .to_params(shape)?
                .into_inner();
            let gamma_max = set.gamma_max(&key)?;
            let gamma = if choice == 1 {
                report.away += 1;
                rng.random_range(0.05..1.0) * gamma_max.min(1.0)
            } else {
                report.drops += 1;
                dropped = Some(key);
                gamma_max
            };
            set.apply_away_step(&key, gamma)?;
            expected = (1.0 + gamma) * &before - gamma * &target;
        }
        report.updates += 1;

        let sum_error = (set.weight_sum() - 1.0).abs();
        let positive = set.iter().all(|(_, e)| e.weight > 0.0);
        let rebuilt = set.point(shape)?;
        let recon = rebuilt
            .as_slice()
            .iter()
            .zip(expected.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let drop_ok = dropped.is_none_or(|k| set.get(&k).is_none());
        report.max_sum_error = report.max_sum_error.max(sum_error);
        report.max_reconstruction_error = report.max_reconstruction_error.max(recon);
        if !(positive && sum_error <= 1e-9 && recon <= 1e-7 && drop_ok) {
            report.violations += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LmoVariant {
    L1,
    Polytope,
    /// Random dimensions up to the given size.
    Trace {
        max_rows: usize,
        max_cols: usize,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct LmoReport {
    pub variant: LmoVariant,
    pub trials: usize,
    /// ℓ1 / polytope: atoms differing from the exhaustive scan.
    pub mismatches: usize,
    /// Trace: worst `|⟨a, G⟩ + R σ₁| / (R σ₁)` against a dense SVD.
    pub max_relative_error: f64,
    pub unconverged: usize,
}

/// Compares LMO outputs on random gradients against exhaustive scans (ℓ1, polytope)
/// or the dense-SVD optimum (trace, using `power`). Trials run on the default
/// execution strategy.
pub fn lmo_check(
    variant: LmoVariant,
    trials: usize,
    seed: u64,
    power: &PowerIterConfig,
) -> Result<LmoReport> {
    power.validate()?;
    let results = exec::map_range(Execution::default(), trials, |i| {
        lmo_trial(variant, seed, i as u64, power)
    });
    let mut report = LmoReport {
        variant,
        trials,
        mismatches: 0,
        max_relative_error: 0.0,
        unconverged: 0,
    };
    for r in results {
        let (mismatch, rel, converged) = r?;
        report.mismatches += usize::from(mismatch);
        report.max_relative_error = report.max_relative_error.max(rel);
        report.unconverged += usize::from(!converged);
    }
    Ok(report)
}

fn lmo_trial(
    variant: LmoVariant,
    seed: u64,
    trial: u64,
    power: &PowerIterConfig,
) -> Result<(bool, f64, bool)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial + 1);
    match variant {
        LmoVariant::L1 | LmoVariant::Polytope => {
            let dim = rng.random_range(1..=40);
            let constraint = if variant == LmoVariant::L1 {
                ConstraintSet::l1_ball(rng.random_range(0.1..10.0), dim)?
            } else {
                let count = rng.random_range(1..=30);
                ConstraintSet::polytope(
                    (0..count)
                        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                        .collect(),
                )?
            };
            // A quarter of the gradients are quantized to force ties.
            let quantize = rng.random_bool(0.25);
            let g: Vec<f64> = (0..dim)
                .map(|_| {
                    let x: f64 = rng.random_range(-1.0..1.0);
                    if quantize {
                        (x * 2.0).round() / 2.0
                    } else {
                        x
                    }
                })
                .collect();
            let g = Gradient::Dense(Params::from_vec(g));
            let chosen = constraint.lmo(&g)?;
            let mut best: Option<(Atom, f64)> = None;
            for atom in constraint.atoms().expect("atomic set") {
                let value = atom.dot(&g)?;
                if best.as_ref().is_none_or(|(_, b)| value < *b) {
                    best = Some((atom, value));
                }
            }
            let (best, _) = best.expect("non-empty atom list");
            Ok((chosen != best, 0.0, true))
        }
        LmoVariant::Trace { max_rows, max_cols } => {
            let rows = rng.random_range(1..=max_rows.max(1));
            let cols = rng.random_range(1..=max_cols.max(1));
            let radius = rng.random_range(0.1..10.0);
            let m =
                Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal));
            let constraint = ConstraintSet::TraceNormBall {
                radius,
                rows,
                cols,
                power: *power,
            };
            let g = Gradient::Dense(Params::from_matrix(m.view()));
            let (atom, converged) = constraint.lmo_with_status(&g)?;
            let optimum = -radius * spectral_norm(m.view());
            let rel = (atom.dot(&g)? - optimum).abs() / optimum.abs();
            Ok((false, rel, converged))
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AggregatorReport {
    /// Worst max-norm gap between an aggregator and the naive replay average.
    pub max_replay_error: f64,
    /// Worst relative gap between replay gradients and central differences.
    pub max_fd_relative_error: f64,
}

/// Feeds up to `max_t` random samples to each aggregator and compares, after every
/// sample, against averaging per-sample gradients from scratch.
pub fn aggregator_check(max_t: usize, seed: u64) -> Result<AggregatorReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AggregatorReport::default();
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

    // LASSO, fixed and varying designs mixed.
    let (m, n) = (4, 6);
    let fixed = std::sync::Arc::new(Array2::from_shape_simple_fn((m, n), || normal(&mut rng)));
    let mut stats = LassoStats::new(n);
    let mut seen: Vec<LassoSample> = Vec::new();
    for _ in 0..max_t {
        let design = if rng.random_bool(0.5) {
            fixed.clone()
        } else {
            std::sync::Arc::new(Array2::from_shape_simple_fn((m, n), || normal(&mut rng)))
        };
        let response = Array1::from_shape_simple_fn(m, || normal(&mut rng));
        let s = LassoSample { design, response };
        stats.update(&s)?;
        seen.push(s);
        let theta = Array1::from_shape_simple_fn(n, || normal(&mut rng));
        let mut naive = Array1::<f64>::zeros(n);
        for s in &seen {
            naive += &s.design.t().dot(&(s.design.dot(&theta) - &s.response));
        }
        naive /= seen.len() as f64;
        let got = stats.gradient(&Params::from_array(theta))?;
        report.max_replay_error = report.max_replay_error.max(max_diff(
            got.as_slice(),
            naive.as_slice().expect("contiguous"),
        ));
    }

    // Matrix completion with every link.
    for link in [
        LinkFunction::Gaussian,
        LinkFunction::Logistic,
        LinkFunction::Poisson,
    ] {
        let (rows, cols) = (3, 4);
        let mut stats = McStats::new(rows, cols, link);
        let mut seen: Vec<McSample> = Vec::new();
        for _ in 0..max_t {
            let s = McSample {
                row: rng.random_range(0..rows),
                col: rng.random_range(0..cols),
                value: normal(&mut rng),
            };
            stats.update(&s)?;
            seen.push(s);
            let theta = Params::with_shape(
                Shape::Matrix(rows, cols),
                Array1::from_shape_simple_fn(rows * cols, || normal(&mut rng)),
            )?;
            let mut naive = vec![0.0; rows * cols];
            for s in &seen {
                let i = s.row * cols + s.col;
                naive[i] += link.mean(theta.as_slice()[i]) - s.value;
            }
            naive.iter_mut().for_each(|x| *x /= seen.len() as f64);
            let got = stats.gradient(&theta)?.to_dense();
            report.max_replay_error = report
                .max_replay_error
                .max(max_diff(got.as_slice(), &naive));
        }
    }

    // Replay with both losses, dense and sparse features; finite differences on the average loss.
    for loss in [ClassificationLoss::default(), ClassificationLoss::Logistic] {
        let dim = 8;
        let mut stats = ReplayStats::new(dim, loss);
        for t in 0..max_t {
            let x = if t % 2 == 0 {
                Features::Dense(Array1::from_shape_simple_fn(dim, || normal(&mut rng)))
            } else {
                let mut indices: Vec<usize> = (0..dim).filter(|_| rng.random_bool(0.4)).collect();
                if indices.is_empty() {
                    indices.push(0);
                }
                let values = indices.iter().map(|_| normal(&mut rng)).collect();
                Features::Sparse {
                    dim,
                    indices,
                    values,
                }
            };
            let y = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            stats.push(LabeledVector { x, y })?;
            let theta: Vec<f64> = (0..dim).map(|_| 0.1 * normal(&mut rng)).collect();
            let mut naive = vec![0.0; dim];
            for s in stats.samples() {
                let dense = s.x.to_dense();
                let u: f64 = dense.iter().zip(&theta).map(|(a, b)| a * b).sum();
                let d = loss.derivative(s.y, u);
                naive
                    .iter_mut()
                    .zip(dense.iter())
                    .for_each(|(o, x)| *o += d * x);
            }
            naive.iter_mut().for_each(|x| *x /= stats.count() as f64);
            let theta = Params::from_vec(theta);
            let got = stats.gradient(&theta)?;
            report.max_replay_error = report
                .max_replay_error
                .max(max_diff(got.as_slice(), &naive));

            let h = 1e-6;
            let mut fd = vec![0.0; dim];
            for (i, slot) in fd.iter_mut().enumerate() {
                let mut plus = theta.clone();
                let mut minus = theta.clone();
                plus.data_mut()[i] += h;
                minus.data_mut()[i] -= h;
                *slot = (stats.average_loss(&plus)? - stats.average_loss(&minus)?) / (2.0 * h);
            }
            let scale = got.max_abs().max(1e-3);
            report.max_fd_relative_error = report
                .max_fd_relative_error
                .max(max_diff(got.as_slice(), &fd) / scale);
        }
    }
    Ok(report)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Runs O-FW for `steps` rounds on noiseless fixed-design quadratics (exact
/// gradients) over the 3-simplex and an ℓ1 ball, and replays the same iteration
/// with a plain loop. Returns the largest coordinate difference.
pub fn solver_reference_check(steps: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let simplex = vec![
        vec![1.0, 0.0, 0.0],
        vec![0.0, 1.0, 0.0],
        vec![0.0, 0.0, 1.0],
    ];
    for vertices in [Some(simplex), None] {
        let design = Array2::from_shape_simple_fn((3, 3), || rng.sample::<f64, _>(StandardNormal));
        let target = Array1::from_shape_simple_fn(3, || rng.sample::<f64, _>(StandardNormal));
        let constraint = match &vertices {
            Some(v) => ConstraintSet::polytope(v.clone())?,
            None => ConstraintSet::l1_ball(0.5, 3)?,
        };
        let w = lasso_with_design(
            design.clone(),
            target.clone(),
            0.0,
            constraint.clone(),
            seed,
        )?;
        let mut oracle: GradientOracle = w.oracle();
        let opts = RunOptions::new(SolverKind::Ofw, StepSchedule::ANYTIME, steps);
        let mut solver = crate::solvers::OfwState::new(w.shape(), opts.schedule)?;
        let mut stream = w.stream();

        let q = design.t().dot(&design);
        let mut theta = [0.0f64; 3];
        for t in 1..=steps {
            let sample: Sample = stream.next().ok_or(Error::NoData)?;
            oracle.observe(&sample)?;
            solver.step(&oracle.gradient(solver.theta())?, &constraint)?;

            let mut g = [0.0; 3];
            for i in 0..3 {
                for j in 0..3 {
                    g[i] += q[[i, j]] * (theta[j] - target[j]);
                }
            }
            let atom: [f64; 3] = match &vertices {
                Some(v) => {
                    let mut best = 0;
                    let score = |k: usize| v[k][0] * g[0] + v[k][1] * g[1] + v[k][2] * g[2];
                    for k in 1..v.len() {
                        if score(k) < score(best) {
                            best = k;
                        }
                    }
                    [v[best][0], v[best][1], v[best][2]]
                }
                None => {
                    let mut best = 0;
                    for k in 1..3 {
                        if g[k].abs() > g[best].abs() {
                            best = k;
                        }
                    }
                    let mut a = [0.0; 3];
                    a[best] = if g[best] >= 0.0 { -0.5 } else { 0.5 };
                    a
                }
            };
            let gamma = 2.0 / (t as f64 + 1.0);
            for i in 0..3 {
                theta[i] = (1.0 - gamma) * theta[i] + gamma * atom[i];
            }
            worst = worst.max(max_diff(solver.theta().as_slice(), &theta));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(Suite::from_name(s.name()).unwrap(), s);
        }
        let err = Suite::from_name("unknown").unwrap_err().to_string();
        assert!(err.contains("interior-lasso") && err.contains("mc"));
        assert_eq!(Suite::InteriorLasso.id(), 1);
        assert_eq!(Suite::Mc.id(), 10);
    }

    #[test]
    fn checkpoints_are_increasing_and_end_at_last() {
        let c = log_checkpoints(100, 1000, 1.5);
        assert_eq!(c.first(), Some(&100));
        assert_eq!(c.last(), Some(&1000));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn cheap_suites_pass() {
        let v = Verifier::default();
        for s in [
            Suite::ActiveSet,
            Suite::Lmo,
            Suite::Aggregators,
            Suite::SolverReference,
        ] {
            let o = v.run(s);
            assert!(o.passed, "{o}");
        }
    }

    #[test]
    fn small_lmo_check_counts_trials() {
        let cfg = PowerIterConfig::default();
        let r = lmo_check(LmoVariant::L1, 20, 3, &cfg).unwrap();
        assert_eq!((r.trials, r.mismatches), (20, 0));
        let r = lmo_check(
            LmoVariant::Trace {
                max_rows: 4,
                max_cols: 3,
            },
            20,
            3,
            &cfg,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6);
    }
}
