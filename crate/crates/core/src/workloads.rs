//! Synthetic problems with known or reference optima.
//!
//! A [`Workload`] bundles a constraint set, a fresh gradient oracle, a seeded
//! sample stream and, where available, the exact expected loss `f` and its
//! gradient for metric evaluation.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::atoms::AtomKey;
use crate::error::{Error, Result};
use crate::gradients::{
    ClassificationLoss, Features, GradientOracle, LabeledVector, LassoSample, LassoStats,
    LinkFunction, McSample, McStats, ReplayStats, Sample,
};
use crate::linalg::nuclear_norm;
use crate::lmo::ConstraintSet;
use crate::metrics::{grad_error, primal_gap, Evaluation, Evaluator, GradNorm};
use crate::params::{Gradient, Params, Shape};
use crate::schedule::StepSchedule;

/// Default iteration budget of [`reference_solve`].
pub const REFERENCE_BUDGET: usize = 1_000_000;

/// Matrix-completion instances with at least this many cells are flagged as long-running.
pub const LONG_RUNNING_CELLS: usize = 100_000;

pub type SampleStream = Box<dyn Iterator<Item = Sample> + Send>;

/// The optimal value, exact or from a numerical solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FStar {
    Exact {
        value: f64,
    },
    /// `value − certificate ≤ f* ≤ value`.
    Reference {
        value: f64,
        certificate: f64,
    },
}

impl FStar {
    pub fn value(self) -> f64 {
        match self {
            FStar::Exact { value } | FStar::Reference { value, .. } => value,
        }
    }

    pub fn is_reference(self) -> bool {
        matches!(self, FStar::Reference { .. })
    }
}

#[derive(Debug, Clone)]
enum Model {
    /// `Y = A θ̄ + w` with a design fixed across rounds.
    FixedLasso {
        design: Arc<Array2<f64>>,
        gram: Array2<f64>,
        theta_bar: Array1<f64>,
        sigma_w: f64,
    },
    /// `Y_t = A_t θ̄ + w_t` with a fresh standard-normal `m × n` design each round.
    RandomLasso {
        m: usize,
        theta_bar: Array1<f64>,
        sigma_w: f64,
    },
    Mc {
        rows: usize,
        cols: usize,
        theta_bar: Array1<f64>,
        noise_var: f64,
        link: LinkFunction,
    },
    Classification {
        dim: usize,
        theta_bar: Array1<f64>,
        n_train: usize,
        flip_frac: f64,
        loss: ClassificationLoss,
    },
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub name: String,
    pub constraint: ConstraintSet,
    pub f_star: Option<FStar>,
    pub theta_star: Option<Params>,
    /// Generation succeeded but a run at this size will take a long time.
    pub long_running: bool,
    model: Model,
    seed: u64,
}

fn generator_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn stream_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

fn gaussian_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn gaussian_vector(rng: &mut impl Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.sample(StandardNormal))
}

fn low_rank(rng: &mut impl Rng, rows: usize, cols: usize, rank: usize) -> Array2<f64> {
    let u = gaussian_matrix(rng, rows, rank);
    let v = gaussian_matrix(rng, cols, rank);
    u.dot(&v.t())
}

fn sparse_target(rng: &mut impl Rng, n: usize, sparsity_frac: f64) -> Array1<f64> {
    let k = ((sparsity_frac * n as f64).ceil() as usize).clamp(1, n);
    let mut theta = Array1::zeros(n);
    for i in sample_indices(rng, n, k) {
        theta[i] = rng.sample(StandardNormal);
    }
    theta
}

fn check_lasso_args(
    n: usize,
    m: usize,
    sparsity_frac: f64,
    sigma_w: f64,
    r_factor: f64,
) -> Result<()> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "LASSO needs n, m >= 1 (got n={n}, m={m})"
        )));
    }
    if !(sparsity_frac > 0.0 && sparsity_frac <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "sparsity_frac must be in (0, 1], got {sparsity_frac}"
        )));
    }
    if !(sigma_w >= 0.0) || !sigma_w.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma_w must be >= 0, got {sigma_w}"
        )));
    }
    if !(r_factor > 0.0) || !r_factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "r_factor must be > 0, got {r_factor}"
        )));
    }
    Ok(())
}

/// Fixed-design sparse regression over `{‖θ‖₁ ≤ r_factor·‖θ̄‖₁}`.
///
/// `f(θ) = ½‖A(θ − θ̄)‖² + (m/2)σ_w²`. For `r_factor ≥ 1`, θ̄ is feasible and is the
/// exact minimizer; otherwise `f_star` is left empty for [`reference_solve`].
pub fn gen_fixed_design_lasso(
    n: usize,
    m: usize,
    sparsity_frac: f64,
    sigma_w: f64,
    r_factor: f64,
    seed: u64,
) -> Result<Workload> {
    check_lasso_args(n, m, sparsity_frac, sigma_w, r_factor)?;
    let mut rng = generator_rng(seed);
    let theta_bar = sparse_target(&mut rng, n, sparsity_frac);
    let design = gaussian_matrix(&mut rng, m, n);
    let radius = r_factor * theta_bar.iter().map(|x| x.abs()).sum::<f64>();
    let constraint = ConstraintSet::l1_ball(radius, n)?;
    let mut w = lasso_with_design(design, theta_bar, sigma_w, constraint, seed)?;
    w.name = format!("fixed-design-lasso(n={n}, m={m}, r_factor={r_factor})");
    if r_factor < 1.0 {
        w.theta_star = None;
        w.f_star = None;
    }
    Ok(w)
}

/// Fixed-design regression with a caller-supplied design and target.
///
/// `theta_star` and `f_star` are filled in when θ̄ lies in `constraint`.
pub fn lasso_with_design(
    design: Array2<f64>,
    theta_bar: Array1<f64>,
    sigma_w: f64,
    constraint: ConstraintSet,
    seed: u64,
) -> Result<Workload> {
    let (m, n) = design.dim();
    if theta_bar.len() != n {
        return Err(Error::shape(n, theta_bar.len()));
    }
    if constraint.shape() != Shape::Vector(n) {
        return Err(Error::shape(Shape::Vector(n), constraint.shape()));
    }
    check_lasso_args(n, m, 1.0, sigma_w, 1.0)?;
    constraint.validate()?;
    let gram = design.t().dot(&design);
    let feasible = contains(&constraint, &theta_bar);
    let offset = 0.5 * m as f64 * sigma_w * sigma_w;
    Ok(Workload {
        name: format!("lasso(n={n}, m={m})"),
        f_star: feasible.then_some(FStar::Exact { value: offset }),
        theta_star: feasible.then(|| Params::from_array(theta_bar.clone())),
        constraint,
        long_running: false,
        model: Model::FixedLasso {
            design: Arc::new(design),
            gram,
            theta_bar,
            sigma_w,
        },
        seed,
    })
}

fn contains(constraint: &ConstraintSet, theta: &Array1<f64>) -> bool {
    match constraint {
        ConstraintSet::L1Ball { radius, .. } => {
            theta.iter().map(|x| x.abs()).sum::<f64>() <= *radius
        }
        // Only exact vertices are recognised; interior points are reported as unknown.
        ConstraintSet::VertexPolytope { vertices } => vertices.iter().any(|v| v.as_ref() == theta),
        ConstraintSet::TraceNormBall { .. } => false,
    }
}

/// Random-design regression: a fresh standard-normal `m × n` design every round.
///
/// `E[AᵀA] = m·I`, so `f(θ) = (m/2)‖θ − θ̄‖² + (m/2)σ_w²`.
pub fn gen_random_design_lasso(
    n: usize,
    m: usize,
    sparsity_frac: f64,
    sigma_w: f64,
    r_factor: f64,
    seed: u64,
) -> Result<Workload> {
    check_lasso_args(n, m, sparsity_frac, sigma_w, r_factor)?;
    let mut rng = generator_rng(seed);
    let theta_bar = sparse_target(&mut rng, n, sparsity_frac);
    let radius = r_factor * theta_bar.iter().map(|x| x.abs()).sum::<f64>();
    let exact = r_factor >= 1.0;
    Ok(Workload {
        name: format!("random-design-lasso(n={n}, m={m}, r_factor={r_factor})"),
        constraint: ConstraintSet::l1_ball(radius, n)?,
        f_star: exact.then_some(FStar::Exact {
            value: 0.5 * m as f64 * sigma_w * sigma_w,
        }),
        theta_star: exact.then(|| Params::from_array(theta_bar.clone())),
        long_running: false,
        model: Model::RandomLasso {
            m,
            theta_bar,
            sigma_w,
        },
        seed,
    })
}

/// Low-rank matrix completion from uniformly sampled entries over a trace-norm ball.
pub fn gen_mc(
    m1: usize,
    m2: usize,
    rank: usize,
    noise_var: f64,
    r_factor: f64,
    link: LinkFunction,
    seed: u64,
) -> Result<Workload> {
    if rank == 0 || m1 == 0 || m2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "matrix completion needs rank, m1, m2 >= 1 (got rank={rank}, {m1}x{m2})"
        )));
    }
    if rank > m1.min(m2) {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} exceeds min({m1}, {m2})"
        )));
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_var must be >= 0, got {noise_var}"
        )));
    }
    if !(r_factor > 0.0) || !r_factor.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "r_factor must be > 0, got {r_factor}"
        )));
    }
    let mut rng = generator_rng(seed);
    let theta_bar = low_rank(&mut rng, m1, m2, rank);
    let radius = r_factor * nuclear_norm(theta_bar.view());
    let theta_bar = Array1::from_iter(theta_bar.iter().copied());
    let exact = r_factor >= 1.0;
    let mut w = Workload {
        name: format!("mc({m1}x{m2}, rank={rank}, link={link:?})"),
        constraint: ConstraintSet::trace_ball(radius, m1, m2)?,
        f_star: None,
        theta_star: None,
        long_running: m1 * m2 >= LONG_RUNNING_CELLS,
        model: Model::Mc {
            rows: m1,
            cols: m2,
            theta_bar: theta_bar.clone(),
            noise_var,
            link,
        },
        seed,
    };
    if exact {
        let star = Params::with_shape(Shape::Matrix(m1, m2), theta_bar)?;
        let value = w
            .objective(&star)
            .expect("matrix completion has an exact objective");
        w.f_star = Some(FStar::Exact { value });
        w.theta_star = Some(star);
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierConstraint {
    /// Flattened parameter in an ℓ1 ball.
    L1 { radius: f64 },
    /// Matrix parameter in a trace-norm ball.
    Trace { radius: f64 },
}

impl Default for ClassifierConstraint {
    fn default() -> Self {
        ClassifierConstraint::Trace { radius: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationSpec {
    pub m1: usize,
    pub m2: usize,
    pub rank: usize,
    pub n_train: usize,
    pub flip_frac: f64,
    #[serde(default)]
    pub loss: ClassificationLoss,
    #[serde(default)]
    pub constraint: ClassifierConstraint,
    pub seed: u64,
}

/// Binary classification with a low-rank linear classifier and label noise.
///
/// Features are standard-normal `m1 × m2` matrices, labels `sign⟨θ̄, x⟩` (zero counts
/// as `+1`), each flipped independently with probability `flip_frac`. The loss is
/// non-convex in general, so no optimum is attached.
pub fn gen_classification(spec: &ClassificationSpec) -> Result<Workload> {
    let ClassificationSpec {
        m1,
        m2,
        rank,
        n_train,
        flip_frac,
        loss,
        constraint,
        seed,
    } = *spec;
    if m1 == 0 || m2 == 0 || rank == 0 || rank > m1.min(m2) {
        return Err(Error::InvalidArgument(format!(
            "classification needs 1 <= rank <= min(m1, m2) (got rank={rank}, {m1}x{m2})"
        )));
    }
    if n_train == 0 {
        return Err(Error::InvalidArgument("n_train must be >= 1".into()));
    }
    if !(0.0..1.0).contains(&flip_frac) {
        return Err(Error::InvalidArgument(format!(
            "flip_frac must be in [0, 1), got {flip_frac}"
        )));
    }
    let constraint = match constraint {
        ClassifierConstraint::L1 { radius } => ConstraintSet::l1_ball(radius, m1 * m2)?,
        ClassifierConstraint::Trace { radius } => ConstraintSet::trace_ball(radius, m1, m2)?,
    };
    let mut rng = generator_rng(seed);
    let theta_bar = Array1::from_iter(low_rank(&mut rng, m1, m2, rank).iter().copied());
    Ok(Workload {
        name: format!("classification({m1}x{m2}, rank={rank}, flip={flip_frac})"),
        constraint,
        f_star: None,
        theta_star: None,
        long_running: false,
        model: Model::Classification {
            dim: m1 * m2,
            theta_bar,
            n_train,
            flip_frac,
            loss,
        },
        seed,
    })
}

impl Workload {
    pub fn shape(&self) -> Shape {
        self.constraint.shape()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The ground-truth parameter the samples are generated from.
    pub fn theta_bar(&self) -> Params {
        let data = match &self.model {
            Model::FixedLasso { theta_bar, .. }
            | Model::RandomLasso { theta_bar, .. }
            | Model::Mc { theta_bar, .. }
            | Model::Classification { theta_bar, .. } => theta_bar.clone(),
        };
        Params::with_shape(self.shape(), data).expect("model and constraint shapes agree")
    }

    /// A fresh, empty gradient oracle matching the sample stream.
    pub fn oracle(&self) -> GradientOracle {
        match &self.model {
            Model::FixedLasso { theta_bar, .. } | Model::RandomLasso { theta_bar, .. } => {
                GradientOracle::Lasso(LassoStats::new(theta_bar.len()))
            }
            Model::Mc {
                rows, cols, link, ..
            } => GradientOracle::Mc(McStats::new(*rows, *cols, *link)),
            Model::Classification { dim, loss, .. } => {
                GradientOracle::Replay(ReplayStats::new(*dim, *loss))
            }
        }
    }

    /// The seeded sample stream. Unbounded except for classification, which ends
    /// after `n_train` samples.
    pub fn stream(&self) -> SampleStream {
        let mut rng = stream_rng(self.seed);
        match self.model.clone() {
            Model::FixedLasso {
                design,
                theta_bar,
                sigma_w,
                ..
            } => {
                let clean = design.dot(&theta_bar);
                let noise = Normal::new(0.0, sigma_w).expect("sigma_w validated");
                Box::new(std::iter::repeat_with(move || {
                    let response = clean.mapv(|y| y + noise.sample(&mut rng));
                    Sample::Lasso(LassoSample {
                        design: design.clone(),
                        response,
                    })
                }))
            }
            Model::RandomLasso {
                m,
                theta_bar,
                sigma_w,
            } => {
                let noise = Normal::new(0.0, sigma_w).expect("sigma_w validated");
                Box::new(std::iter::repeat_with(move || {
                    let design = gaussian_matrix(&mut rng, m, theta_bar.len());
                    let response = design.dot(&theta_bar).mapv(|y| y + noise.sample(&mut rng));
                    Sample::Lasso(LassoSample {
                        design: Arc::new(design),
                        response,
                    })
                }))
            }
            Model::Mc {
                rows,
                cols,
                theta_bar,
                noise_var,
                link,
            } => {
                let noise = Normal::new(0.0, noise_var.sqrt()).expect("noise_var validated");
                Box::new(std::iter::repeat_with(move || {
                    let row = rng.random_range(0..rows);
                    let col = rng.random_range(0..cols);
                    let natural = theta_bar[row * cols + col];
                    let value = match link {
                        LinkFunction::Gaussian => natural + noise.sample(&mut rng),
                        LinkFunction::Logistic => {
                            f64::from(u8::from(rng.random_bool(link.mean(natural))))
                        }
                        LinkFunction::Poisson => Poisson::new(link.mean(natural))
                            .map(|p| p.sample(&mut rng))
                            .unwrap_or(0.0),
                    };
                    Sample::Mc(McSample { row, col, value })
                }))
            }
            Model::Classification {
                dim,
                theta_bar,
                n_train,
                flip_frac,
                ..
            } => {
                let flip = Bernoulli::new(flip_frac).expect("flip_frac validated");
                Box::new((0..n_train).map(move |_| {
                    let x = gaussian_vector(&mut rng, dim);
                    let clean = if x.dot(&theta_bar) >= 0.0 { 1.0 } else { -1.0 };
                    let y = if flip.sample(&mut rng) { -clean } else { clean };
                    Sample::Labeled(LabeledVector {
                        x: Features::Dense(x),
                        y,
                    })
                }))
            }
        }
    }

    /// Exact expected loss, including the irreducible noise term.
    pub fn objective(&self, theta: &Params) -> Option<f64> {
        if theta.shape() != self.shape() {
            return None;
        }
        let th = theta.data();
        match &self.model {
            Model::FixedLasso {
                design,
                theta_bar,
                sigma_w,
                ..
            } => {
                let r = design.dot(&(th - theta_bar));
                Some(0.5 * r.dot(&r) + 0.5 * design.nrows() as f64 * sigma_w * sigma_w)
            }
            Model::RandomLasso {
                m,
                theta_bar,
                sigma_w,
            } => {
                let d = th - theta_bar;
                Some(0.5 * *m as f64 * (d.dot(&d) + sigma_w * sigma_w))
            }
            Model::Mc {
                theta_bar,
                noise_var,
                link,
                ..
            } => {
                let cells = theta_bar.len() as f64;
                Some(match link {
                    LinkFunction::Gaussian => {
                        let d = th - theta_bar;
                        d.dot(&d) / (2.0 * cells) + 0.5 * noise_var
                    }
                    _ => {
                        th.iter()
                            .zip(theta_bar)
                            .map(|(&x, &b)| link.log_partition(x) - link.mean(b) * x)
                            .sum::<f64>()
                            / cells
                    }
                })
            }
            Model::Classification { .. } => None,
        }
    }

    /// Exact `∇f`, where available.
    pub fn gradient(&self, theta: &Params) -> Option<Params> {
        if theta.shape() != self.shape() {
            return None;
        }
        let th = theta.data();
        let data = match &self.model {
            Model::FixedLasso {
                gram, theta_bar, ..
            } => gram.dot(&(th - theta_bar)),
            Model::RandomLasso { m, theta_bar, .. } => (th - theta_bar) * *m as f64,
            Model::Mc {
                theta_bar, link, ..
            } => {
                let cells = theta_bar.len() as f64;
                Array1::from_iter(
                    th.iter()
                        .zip(theta_bar)
                        .map(|(&x, &b)| (link.mean(x) - link.mean(b)) / cells),
                )
            }
            Model::Classification { .. } => return None,
        };
        Some(Params::with_shape(theta.shape(), data).expect("shape preserved"))
    }

    /// Attaches a reference optimum computed by [`reference_solve`].
    pub fn with_reference(mut self, budget: usize) -> Result<Self> {
        let f_star = reference_solve(&self, budget)?;
        self.f_star = Some(f_star);
        Ok(self)
    }

    /// An evaluator that can skip the gradient-error metrics.
    pub fn evaluator(&self, grad_errors: bool) -> WorkloadEvaluator<'_> {
        WorkloadEvaluator {
            workload: self,
            grad_errors,
        }
    }

    /// `(θ̄, offset)` when `f(θ) = ½⟨θ − θ̄, ∇f(θ)⟩ + offset` with affine `∇f`.
    fn quadratic_form(&self) -> Option<(&Array1<f64>, f64)> {
        match &self.model {
            Model::FixedLasso {
                design,
                theta_bar,
                sigma_w,
                ..
            } => Some((theta_bar, 0.5 * design.nrows() as f64 * sigma_w * sigma_w)),
            Model::RandomLasso {
                m,
                theta_bar,
                sigma_w,
            } => Some((theta_bar, 0.5 * *m as f64 * sigma_w * sigma_w)),
            Model::Mc {
                theta_bar,
                noise_var,
                link: LinkFunction::Gaussian,
                ..
            } => Some((theta_bar, 0.5 * noise_var)),
            _ => None,
        }
    }
}

impl Evaluator for Workload {
    fn evaluate(&self, theta: &Params, ghat: &Gradient) -> Evaluation {
        self.evaluator(true).evaluate(theta, ghat)
    }
}

pub struct WorkloadEvaluator<'a> {
    workload: &'a Workload,
    grad_errors: bool,
}

impl Evaluator for WorkloadEvaluator<'_> {
    fn evaluate(&self, theta: &Params, ghat: &Gradient) -> Evaluation {
        let w = self.workload;
        let f_value = w.objective(theta);
        let (h, h_clamped) = match (f_value, w.f_star) {
            (Some(f), Some(star)) => {
                let (h, clamped) = primal_gap(f, star.value());
                (Some(h), clamped)
            }
            _ => (None, false),
        };
        let (mut grad_err_inf, mut grad_err_op) = (None, None);
        if self.grad_errors {
            if let Some(g) = w.gradient(theta) {
                let g = Gradient::Dense(g);
                grad_err_inf = grad_error(ghat, &g, GradNorm::Inf).ok();
                if theta.as_matrix().is_some() {
                    grad_err_op = grad_error(ghat, &g, GradNorm::Operator).ok();
                }
            }
        }
        Evaluation {
            f_value,
            h,
            h_clamped,
            grad_err_inf,
            grad_err_op,
            ..Evaluation::default()
        }
    }
}

/// Exact-gradient Frank-Wolfe with the anytime schedule for `budget` iterations.
///
/// Returns the smallest objective seen together with the smallest FW gap seen;
/// since `f(θ) − f* ≤ g_FW(θ)` at every iterate, `value − certificate ≤ f* ≤ value`.
pub fn reference_solve(workload: &Workload, budget: usize) -> Result<FStar> {
    if budget == 0 {
        return Err(Error::InvalidArgument(
            "reference budget must be >= 1".into(),
        ));
    }
    let shape = workload.shape();
    let constraint = &workload.constraint;
    let mut theta = Params::zeros(shape);
    let mut grad = workload.gradient(&theta).ok_or_else(|| {
        Error::InvalidArgument(format!("{} has no exact gradient", workload.name))
    })?;
    let schedule = StepSchedule::ANYTIME;
    let quadratic = workload.quadratic_form();
    // ∇f at each atom; with an affine gradient ∇f((1−γ)θ + γa) = (1−γ)∇f(θ) + γ∇f(a).
    let mut atom_grads: HashMap<AtomKey, Params> = HashMap::new();

    let mut best_f = f64::INFINITY;
    let mut best_gap = f64::INFINITY;
    for t in 1..=budget {
        let g = Gradient::Dense(grad);
        let atom = constraint.lmo(&g)?;
        let Gradient::Dense(g) = g else {
            unreachable!()
        };
        let gap = g.dot(&theta)? - atom.dot_params(&g)?;
        let f = match quadratic {
            Some((center, offset)) => 0.5 * (theta.data() - center).dot(g.data()) + offset,
            None => workload
                .objective(&theta)
                .expect("exact gradient implies exact objective"),
        };
        best_f = best_f.min(f);
        best_gap = best_gap.min(gap);
        if t == budget {
            break;
        }

        let gamma = schedule.step_size(t)?;
        *theta.data_mut() *= 1.0 - gamma;
        atom.add_scaled_to(&mut theta, gamma)?;
        grad = match quadratic {
            // Resynchronise periodically so rounding in the recursion cannot accumulate.
            Some(_) if t % 4096 != 0 => {
                let at_atom = match atom.canonical_key() {
                    Some(key) => atom_grads
                        .entry(key)
                        .or_insert_with(|| {
                            workload
                                .gradient(&atom.to_params(shape).expect("atom shape"))
                                .expect("exact")
                        })
                        .clone(),
                    None => workload.gradient(&atom.to_params(shape)?).expect("exact"),
                };
                let mut next = g;
                *next.data_mut() *= 1.0 - gamma;
                next.data_mut().scaled_add(gamma, at_atom.data());
                next
            }
            _ => workload.gradient(&theta).expect("exact"),
        };
    }
    Ok(FStar::Reference {
        value: best_f,
        certificate: best_gap.max(0.0),
    })
}
