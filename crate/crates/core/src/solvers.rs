//! The O-FW and O-AW state machines and the online round loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::atoms::{ActiveSet, AtomKey, GAMMA_MAX_TOL};
use crate::error::{Error, Result};
use crate::gradients::{GradientOracle, Sample};
use crate::lmo::ConstraintSet;
use crate::metrics::{Cadence, Evaluator, Trace};
use crate::params::{Gradient, Params, Shape};
use crate::schedule::StepSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Ofw,
    Oaw,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum StepKind {
    #[default]
    FrankWolfe,
    Away,
    Drop,
}

impl StepKind {
    pub fn label(self) -> &'static str {
        match self {
            StepKind::FrankWolfe => "FW",
            StepKind::Away => "AW",
            StepKind::Drop => "Drop",
        }
    }
}

/// One solver step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepRecord {
    /// Solver step index, starting at 1.
    pub t: usize,
    /// Online round the step belongs to.
    pub round: usize,
    /// Non-drop steps so far (equals `t` for O-FW).
    pub n_t: usize,
    pub kind: StepKind,
    pub gamma_hat: f64,
    pub g_fw: f64,
    pub g_aw: Option<f64>,
    pub fw_atom: Option<AtomKey>,
    pub away_atom: Option<AtomKey>,
    pub lmo_converged: bool,
    pub elapsed_ns: u64,
}

fn check_gradient(ghat: &Gradient, shape: Shape, constraint: &ConstraintSet) -> Result<()> {
    if ghat.shape() != shape {
        return Err(Error::shape(shape, ghat.shape()));
    }
    if constraint.shape() != shape {
        return Err(Error::shape(shape, constraint.shape()));
    }
    if !ghat.is_finite() {
        return Err(Error::NonFinite("surrogate gradient".into()));
    }
    Ok(())
}

/// Online Frank-Wolfe: `θ_{t+1} = θ_t + γ_t (a_t − θ_t)`.
#[derive(Debug, Clone)]
pub struct OfwState {
    theta: Params,
    t: usize,
    schedule: StepSchedule,
}

impl OfwState {
    pub fn new(shape: Shape, schedule: StepSchedule) -> Result<Self> {
        schedule.validate()?;
        Ok(Self {
            theta: Params::zeros(shape),
            t: 1,
            schedule,
        })
    }

    pub fn theta(&self) -> &Params {
        &self.theta
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, ghat: &Gradient, constraint: &ConstraintSet) -> Result<StepRecord> {
        self.step_with_index(ghat, constraint, self.t)
    }

    /// Like [`step`](Self::step) but reads the schedule at `index` instead of `t`.
    pub fn step_with_index(
        &mut self,
        ghat: &Gradient,
        constraint: &ConstraintSet,
        index: usize,
    ) -> Result<StepRecord> {
        let start = Instant::now();
        check_gradient(ghat, self.theta.shape(), constraint)?;
        let (atom, converged) = constraint.lmo_with_status(ghat)?;
        let gamma = self.schedule.step_size(index)?;
        let g_fw = ghat.dot(&self.theta)? - atom.dot(ghat)?;

        *self.theta.data_mut() *= 1.0 - gamma;
        atom.add_scaled_to(&mut self.theta, gamma)?;

        let record = StepRecord {
            t: self.t,
            round: self.t,
            n_t: self.t,
            kind: StepKind::FrankWolfe,
            gamma_hat: gamma,
            g_fw,
            g_aw: None,
            fw_atom: atom.canonical_key(),
            away_atom: None,
            lmo_converged: converged,
            elapsed_ns: start.elapsed().as_nanos() as u64,
        };
        self.t += 1;
        Ok(record)
    }
}

/// Online away-step Frank-Wolfe over an atomic set.
#[derive(Debug, Clone)]
pub struct OawState {
    theta: Params,
    active: ActiveSet,
    t: usize,
    n: usize,
    schedule: StepSchedule,
}

impl OawState {
    pub fn new(constraint: &ConstraintSet, schedule: StepSchedule) -> Result<Self> {
        Self::from_active(constraint, schedule, ActiveSet::new(), 0, 1)
    }

    /// Resumes from a given decomposition; `t` is the next step index and `n`
    /// the number of non-drop steps taken so far.
    pub fn from_active(
        constraint: &ConstraintSet,
        schedule: StepSchedule,
        active: ActiveSet,
        n: usize,
        t: usize,
    ) -> Result<Self> {
        if !constraint.is_atomic() {
            return Err(Error::UnsupportedConstraint(
                "away steps need an atomic (polytope) constraint set".into(),
            ));
        }
        schedule.validate()?;
        if !active.is_empty() && n == 0 {
            return Err(Error::InvalidArgument(
                "a non-empty active set implies n >= 1".into(),
            ));
        }
        let theta = active.point(constraint.shape())?;
        Ok(Self {
            theta,
            active,
            t: t.max(1),
            n,
            schedule,
        })
    }

    pub fn theta(&self) -> &Params {
        &self.theta
    }

    pub fn active(&self) -> &ActiveSet {
        &self.active
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn non_drop_steps(&self) -> usize {
        self.n
    }

    pub fn step(&mut self, ghat: &Gradient, constraint: &ConstraintSet) -> Result<StepRecord> {
        let start = Instant::now();
        if !constraint.is_atomic() {
            return Err(Error::UnsupportedConstraint(
                "away steps need an atomic (polytope) constraint set".into(),
            ));
        }
        check_gradient(ghat, self.theta.shape(), constraint)?;

        let (fw_atom, converged) = constraint.lmo_with_status(ghat)?;
        let at_theta = ghat.dot(&self.theta)?;
        let at_fw = fw_atom.dot(ghat)?;
        let g_fw = at_theta - at_fw;
        let away = self.active.away_atom(ghat)?;
        let g_aw = away.map(|(_, at_away)| at_away - at_fw);

        let fw_branch = match away {
            None => true,
            Some((_, at_away)) => self.active.len() == 1 || at_fw - at_theta <= at_theta - at_away,
        };

        let (kind, gamma_hat, fw_key, away_key) = if fw_branch {
            self.n += 1;
            let gamma = self.schedule.step_size(self.n)?;
            let key = self.active.apply_fw_step(fw_atom, gamma)?;
            (StepKind::FrankWolfe, gamma, Some(key), None)
        } else {
            let (key, _) = away.expect("away branch needs an active atom");
            let gamma_max = self.active.gamma_max(&key)?;
            let previous = self.schedule.step_size(self.n)?;
            if gamma_max >= previous - GAMMA_MAX_TOL {
                self.n += 1;
                let gamma = self.schedule.step_size(self.n)?;
                if gamma > gamma_max + GAMMA_MAX_TOL {
                    return Err(Error::InvariantViolation(format!(
                        "away step {gamma} exceeds gamma_max {gamma_max}"
                    )));
                }
                self.active.apply_away_step(&key, gamma)?;
                (StepKind::Away, gamma, fw_atom.canonical_key(), Some(key))
            } else {
                self.active.apply_away_step(&key, gamma_max)?;
                (
                    StepKind::Drop,
                    gamma_max,
                    fw_atom.canonical_key(),
                    Some(key),
                )
            }
        };

        self.theta = self.active.point(self.theta.shape())?;
        let record = StepRecord {
            t: self.t,
            round: self.t,
            n_t: self.n,
            kind,
            gamma_hat,
            g_fw,
            g_aw,
            fw_atom: fw_key,
            away_atom: away_key,
            lmo_converged: converged,
            elapsed_ns: start.elapsed().as_nanos() as u64,
        };
        self.t += 1;
        Ok(record)
    }
}

/// Which counter indexes the O-FW step size when `inner_repeats > 1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleClock {
    /// One schedule tick per solver step.
    #[default]
    Step,
    /// All inner steps of a round share the round's step size (O-FW only).
    Round,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub kind: SolverKind,
    pub schedule: StepSchedule,
    pub horizon: usize,
    pub batch: usize,
    pub inner_repeats: usize,
    pub cadence: Cadence,
    pub clock: ScheduleClock,
}

impl RunOptions {
    pub fn new(kind: SolverKind, schedule: StepSchedule, horizon: usize) -> Self {
        Self {
            kind,
            schedule,
            horizon,
            batch: 1,
            inner_repeats: 1,
            cadence: Cadence::Geometric,
            clock: ScheduleClock::Step,
        }
    }

    pub fn validate(&self, constraint: &ConstraintSet) -> Result<()> {
        if self.horizon == 0 || self.batch == 0 || self.inner_repeats == 0 {
            return Err(Error::InvalidArgument(format!(
                "horizon, batch and inner_repeats must be >= 1 (got {}, {}, {})",
                self.horizon, self.batch, self.inner_repeats
            )));
        }
        self.schedule.validate()?;
        constraint.validate()?;
        if self.kind == SolverKind::Oaw {
            if !constraint.is_atomic() {
                return Err(Error::UnsupportedConstraint(
                    "O-AW needs an atomic (polytope) constraint set; the trace-norm ball is not"
                        .into(),
                ));
            }
            if self.clock == ScheduleClock::Round {
                return Err(Error::InvalidArgument(
                    "the per-round schedule clock applies to O-FW only".into(),
                ));
            }
        }
        Ok(())
    }
}

enum Solver {
    Ofw(OfwState),
    Oaw(OawState),
}

impl Solver {
    fn theta(&self) -> &Params {
        match self {
            Solver::Ofw(s) => s.theta(),
            Solver::Oaw(s) => s.theta(),
        }
    }
}

/// Plays `horizon` rounds: pull `batch` samples, then take `inner_repeats`
/// solver steps, re-querying the aggregated gradient before each one.
pub fn run<I>(
    opts: &RunOptions,
    oracle: &mut GradientOracle,
    constraint: &ConstraintSet,
    stream: I,
    evaluator: Option<&dyn Evaluator>,
) -> Result<Trace>
where
    I: IntoIterator<Item = Sample>,
{
    opts.validate(constraint)?;
    let started = Instant::now();
    let mut solver = match opts.kind {
        SolverKind::Ofw => Solver::Ofw(OfwState::new(constraint.shape(), opts.schedule)?),
        SolverKind::Oaw => Solver::Oaw(OawState::new(constraint, opts.schedule)?),
    };
    let mut stream = stream.into_iter();
    let mut trace = Trace {
        records: Vec::with_capacity(opts.horizon * opts.inner_repeats),
        ..Trace::default()
    };

    for round in 1..=opts.horizon {
        let mut pulled = 0;
        for sample in stream.by_ref().take(opts.batch) {
            oracle.observe(&sample)?;
            pulled += 1;
        }
        if pulled < opts.batch {
            trace.truncated = true;
            if pulled == 0 {
                break;
            }
        }

        for inner in 0..opts.inner_repeats {
            let step_started = Instant::now();
            let ghat = oracle.gradient(solver.theta())?;
            if inner == 0 && opts.cadence.is_checkpoint(round, opts.horizon) {
                if let Some(ev) = evaluator {
                    let mut e = ev.evaluate(solver.theta(), &ghat);
                    e.round = round;
                    e.step = trace.records.len() + 1;
                    trace.evaluations.push(e);
                }
            }
            let mut record = match &mut solver {
                Solver::Ofw(s) => match opts.clock {
                    ScheduleClock::Step => s.step(&ghat, constraint)?,
                    ScheduleClock::Round => s.step_with_index(&ghat, constraint, round)?,
                },
                Solver::Oaw(s) => {
                    let r = s.step(&ghat, constraint)?;
                    if r.n_t < r.t.div_ceil(2) {
                        trace.drop_lemma_violations += 1;
                    }
                    r
                }
            };
            record.round = round;
            record.elapsed_ns = step_started.elapsed().as_nanos() as u64;
            if !record.lmo_converged {
                trace.lmo_unconverged += 1;
            }
            trace.records.push(record);
        }
        trace.rounds_completed = round;
        if trace.truncated {
            break;
        }
    }
    trace.link_saturated = oracle.saturated();
    trace.wall_clock_ns = started.elapsed().as_nanos();
    Ok(trace)
}
