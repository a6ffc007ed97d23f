//! Projection-free online optimization.
//!
//! Online Frank-Wolfe (O-FW) and online away-step Frank-Wolfe (O-AW) driven by
//! aggregated gradients `t⁻¹ Σ ∇f_s(θ)`, with linear minimization oracles for the
//! ℓ1 ball, explicit vertex polytopes and the trace-norm ball.
//!
//! The crate is organised bottom-up:
//!
//! * [`params`], [`atoms`], [`schedule`]: iterates, atoms, active sets and step sizes.
//! * [`linalg`] and [`lmo`]: power iteration, a dense Jacobi SVD, and the oracles.
//! * [`gradients`]: sufficient-statistic aggregators and the replay aggregator.
//! * [`solvers`]: the O-FW / O-AW state machines and the round loop.
//! * [`metrics`]: duality gaps, optimality gaps, regret and rate fitting.
//! * [`workloads`]: synthetic problems with known or reference optima.
//! * [`verify`]: the verification experiments shared by the CLI and the acceptance suite.
//!
//! With the default `parallel` feature, batch-style loops (replay gradients,
//! seed grids, randomized checks) run on rayon; without it they run sequentially
//! and produce bit-identical results.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atoms;
pub mod error;
pub mod exec;
pub mod gradients;
pub mod linalg;
pub mod lmo;
pub mod metrics;
pub mod params;
pub mod schedule;
pub mod solvers;
pub mod verify;
pub mod workloads;

pub use atoms::{ActiveSet, Atom, AtomKey, Sign};
pub use error::{Error, Result};
pub use gradients::{GradientOracle, Sample};
pub use lmo::{ConstraintSet, PowerIterConfig};
pub use metrics::Trace;
pub use params::{Gradient, Params, Shape, SparseMatrix};
pub use schedule::StepSchedule;
pub use solvers::{OawState, OfwState, RunOptions, SolverKind, StepKind, StepRecord};
pub use workloads::Workload;
