//! Aggregated-gradient oracles producing `∇F_t(θ) = t⁻¹ Σ_{s≤t} ∇f_s(θ)`.
//!
//! The LASSO and matrix-completion oracles keep sufficient statistics, so a
//! gradient costs the same at every `t`. The replay oracle keeps every sample
//! and recomputes the average, which is what a generic non-convex loss needs.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::params::{Gradient, Params, Shape, SparseMatrix};

/// Steepness of the sigmoid surrogate of the 0/1 loss.
pub const SIGMOID_SCALE: f64 = 10.0;

/// Exponent clamp applied to exponential links before evaluation.
pub const LINK_EXP_CLAMP: f64 = 50.0;

/// Samples per partial sum in the replay oracle. Fixed so that sequential and
/// parallel evaluation add in the same order.
pub const REPLAY_CHUNK: usize = 256;

/// One observation `(Y_t, A_t)`; the design is shared so fixed designs cost nothing to clone.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoSample {
    pub design: Arc<Array2<f64>>,
    pub response: Array1<f64>,
}

/// One observed entry `(k_t, l_t, Y_t)`, 0-based.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSample {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Array1<f64>),
    Sparse {
        dim: usize,
        indices: Vec<usize>,
        values: Vec<f64>,
    },
}

impl Features {
    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(x) => x.len(),
            Features::Sparse { dim, .. } => *dim,
        }
    }

    pub fn dot(&self, theta: &[f64]) -> f64 {
        match self {
            Features::Dense(x) => x.dot(&ArrayView1::from(theta)),
            Features::Sparse {
                indices, values, ..
            } => indices.iter().zip(values).map(|(&i, v)| v * theta[i]).sum(),
        }
    }

    pub fn add_scaled_to(&self, out: &mut [f64], coef: f64) {
        match self {
            Features::Dense(x) => out
                .iter_mut()
                .zip(x.iter())
                .for_each(|(o, v)| *o += coef * v),
            Features::Sparse {
                indices, values, ..
            } => {
                for (&i, v) in indices.iter().zip(values) {
                    out[i] += coef * v;
                }
            }
        }
    }

    pub fn to_dense(&self) -> Array1<f64> {
        match self {
            Features::Dense(x) => x.clone(),
            Features::Sparse {
                dim,
                indices,
                values,
            } => {
                let mut out = Array1::zeros(*dim);
                for (&i, v) in indices.iter().zip(values) {
                    out[i] += v;
                }
                out
            }
        }
    }
}

/// A labelled feature vector `(y_t, x_t)` with `y_t ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVector {
    pub x: Features,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sample {
    Lasso(LassoSample),
    Mc(McSample),
    Labeled(LabeledVector),
}

/// Exponential-family link: log-partition `g` and mean function `g′`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkFunction {
    Gaussian,
    Logistic,
    Poisson,
}

impl LinkFunction {
    pub fn log_partition(self, x: f64) -> f64 {
        match self {
            LinkFunction::Gaussian => 0.5 * x * x,
            LinkFunction::Logistic => softplus(x),
            LinkFunction::Poisson => x.clamp(-LINK_EXP_CLAMP, LINK_EXP_CLAMP).exp(),
        }
    }

    pub fn mean(self, x: f64) -> f64 {
        self.mean_checked(x).0
    }

    /// `g′(x)` and whether the Poisson exponent had to be clamped.
    pub fn mean_checked(self, x: f64) -> (f64, bool) {
        match self {
            LinkFunction::Gaussian => (x, false),
            LinkFunction::Logistic => (logistic(x), false),
            LinkFunction::Poisson => {
                let clamped = x.clamp(-LINK_EXP_CLAMP, LINK_EXP_CLAMP);
                (clamped.exp(), clamped != x)
            }
        }
    }
}

/// `1 / (1 + e^{−z})` without overflow.
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Running means of `A_sᵀA_s` and `A_sᵀY_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoStats {
    gram: Array2<f64>,
    cross: Array1<f64>,
    t: usize,
    /// `AᵀA` of the last design seen; reused while the design pointer is unchanged.
    cached: Option<(Arc<Array2<f64>>, Array2<f64>)>,
}

impl LassoStats {
    pub fn new(dim: usize) -> Self {
        Self {
            gram: Array2::zeros((dim, dim)),
            cross: Array1::zeros(dim),
            t: 0,
            cached: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.cross.len()
    }

    pub fn count(&self) -> usize {
        self.t
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn cross(&self) -> &Array1<f64> {
        &self.cross
    }

    pub fn update(&mut self, sample: &LassoSample) -> Result<()> {
        let (m, n) = sample.design.dim();
        if n != self.dim() || sample.response.len() != m {
            return Err(Error::shape(
                format!("design ?x{} with matching response", self.dim()),
                format!("design {m}x{n}, response {}", sample.response.len()),
            ));
        }
        let reuse = matches!(&self.cached, Some((d, _)) if Arc::ptr_eq(d, &sample.design));
        if !reuse {
            let g = sample.design.t().dot(sample.design.as_ref());
            self.cached = Some((sample.design.clone(), g));
        }
        let gram_t = &self.cached.as_ref().expect("just cached").1;
        let cross_t = sample.design.t().dot(&sample.response);

        self.t += 1;
        let w = 1.0 / self.t as f64;
        self.gram *= 1.0 - w;
        self.gram.scaled_add(w, gram_t);
        self.cross *= 1.0 - w;
        self.cross.scaled_add(w, &cross_t);
        Ok(())
    }

    /// `S_AA θ − S_AY`.
    pub fn gradient(&self, theta: &Params) -> Result<Params> {
        if self.t == 0 {
            return Err(Error::NoData);
        }
        theta.ensure_shape(Shape::Vector(self.dim()))?;
        Ok(Params::from_array(
            self.gram.dot(theta.data()) - &self.cross,
        ))
    }
}

/// Running sufficient statistics for exponential-family matrix completion.
///
/// Per observed cell we keep the running sums `Σ Y_s` and the observation count;
/// the running means `S¹ = t⁻¹ Σ Y_s e e′ᵀ` and `S² = t⁻¹ Σ e e′ᵀ` are exposed on
/// demand. Storage is `O(min(m1·m2, t))`.
#[derive(Debug)]
pub struct McStats {
    rows: usize,
    cols: usize,
    cells: BTreeMap<(usize, usize), (f64, f64)>,
    t: usize,
    link: LinkFunction,
    saturated: AtomicBool,
}

impl Clone for McStats {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            cells: self.cells.clone(),
            t: self.t,
            link: self.link,
            saturated: AtomicBool::new(self.saturated.load(Ordering::Relaxed)),
        }
    }
}

impl McStats {
    pub fn new(rows: usize, cols: usize, link: LinkFunction) -> Self {
        Self {
            rows,
            cols,
            cells: BTreeMap::new(),
            t: 0,
            link,
            saturated: AtomicBool::new(false),
        }
    }

    pub fn count(&self) -> usize {
        self.t
    }

    pub fn link(&self) -> LinkFunction {
        self.link
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn support_len(&self) -> usize {
        self.cells.len()
    }

    /// Whether any gradient so far clamped the link exponent.
    pub fn saturated(&self) -> bool {
        self.saturated.load(Ordering::Relaxed)
    }

    pub fn update(&mut self, sample: &McSample) -> Result<()> {
        if sample.row >= self.rows || sample.col >= self.cols {
            return Err(Error::IndexOutOfRange(format!(
                "cell ({}, {}) in a {}x{} matrix",
                sample.row, sample.col, self.rows, self.cols
            )));
        }
        if !sample.value.is_finite() {
            return Err(Error::NonFinite("matrix-completion observation".into()));
        }
        let cell = self
            .cells
            .entry((sample.row, sample.col))
            .or_insert((0.0, 0.0));
        cell.0 += sample.value;
        cell.1 += 1.0;
        self.t += 1;
        Ok(())
    }

    /// `S¹` as `(row, col, mean)` triplets in row-major order.
    pub fn s1(&self) -> Vec<(usize, usize, f64)> {
        let t = self.t.max(1) as f64;
        self.cells
            .iter()
            .map(|(&(r, c), &(y, _))| (r, c, y / t))
            .collect()
    }

    /// `S²` as `(row, col, mean)` triplets in row-major order.
    pub fn s2(&self) -> Vec<(usize, usize, f64)> {
        let t = self.t.max(1) as f64;
        self.cells
            .iter()
            .map(|(&(r, c), &(_, n))| (r, c, n / t))
            .collect()
    }

    /// `g′(θ_kl) S²_kl − S¹_kl` on the observed support.
    pub fn gradient(&self, theta: &Params) -> Result<SparseMatrix> {
        if self.t == 0 {
            return Err(Error::NoData);
        }
        theta.ensure_shape(Shape::Matrix(self.rows, self.cols))?;
        let data = theta.as_slice();
        let inv_t = 1.0 / self.t as f64;
        let mut saturated = false;
        let entries = self
            .cells
            .iter()
            .map(|(&(r, c), &(y, n))| {
                let (mean, sat) = self.link.mean_checked(data[r * self.cols + c]);
                saturated |= sat;
                (r, c, (mean * n - y) * inv_t)
            })
            .collect();
        if saturated {
            self.saturated.store(true, Ordering::Relaxed);
        }
        Ok(SparseMatrix::from_sorted_unchecked(
            self.rows, self.cols, entries,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassificationLoss {
    /// `σ(−s·y⟨θ,x⟩)`, a smooth non-convex surrogate of the 0/1 loss.
    Sigmoid { scale: f64 },
    /// `log(1 + exp(−y⟨θ,x⟩))`.
    Logistic,
}

impl Default for ClassificationLoss {
    fn default() -> Self {
        ClassificationLoss::Sigmoid {
            scale: SIGMOID_SCALE,
        }
    }
}

impl ClassificationLoss {
    /// Loss at margin input `u = ⟨θ,x⟩`.
    pub fn value(self, y: f64, u: f64) -> f64 {
        match self {
            ClassificationLoss::Sigmoid { scale } => logistic(-scale * y * u),
            ClassificationLoss::Logistic => softplus(-y * u),
        }
    }

    /// `d loss / d u`, so that `∇f = derivative · x`.
    pub fn derivative(self, y: f64, u: f64) -> f64 {
        match self {
            ClassificationLoss::Sigmoid { scale } => {
                let z = -scale * y * u;
                // σ(z)(1 − σ(z)) = e^{−|z|} / (1 + e^{−|z|})²
                let e = (-z.abs()).exp();
                let slope = e / ((1.0 + e) * (1.0 + e));
                -scale * y * slope
            }
            ClassificationLoss::Logistic => -y * logistic(-y * u),
        }
    }
}

/// Keeps every labelled sample and recomputes the average gradient on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStats {
    samples: Vec<LabeledVector>,
    /// Row-major copy of the features while every sample is dense.
    dense_rows: Option<Vec<f64>>,
    loss: ClassificationLoss,
    dim: usize,
    exec: Execution,
}

impl ReplayStats {
    pub fn new(dim: usize, loss: ClassificationLoss) -> Self {
        Self {
            samples: Vec::new(),
            dense_rows: Some(Vec::new()),
            loss,
            dim,
            exec: Execution::default(),
        }
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn count(&self) -> usize {
        self.samples.len()
    }

    pub fn loss(&self) -> ClassificationLoss {
        self.loss
    }

    pub fn samples(&self) -> &[LabeledVector] {
        &self.samples
    }

    pub fn push(&mut self, sample: LabeledVector) -> Result<()> {
        if sample.x.dim() != self.dim {
            return Err(Error::shape(self.dim, sample.x.dim()));
        }
        if let Features::Sparse {
            indices, values, ..
        } = &sample.x
        {
            if indices.len() != values.len() || indices.iter().any(|&i| i >= self.dim) {
                return Err(Error::IndexOutOfRange(format!(
                    "sparse feature index beyond dimension {}",
                    self.dim
                )));
            }
        }
        if sample.y != 1.0 && sample.y != -1.0 {
            return Err(Error::InvalidArgument(format!(
                "label {} is not +-1",
                sample.y
            )));
        }
        match (&mut self.dense_rows, &sample.x) {
            (Some(rows), Features::Dense(x)) => rows.extend(x.iter()),
            _ => self.dense_rows = None,
        }
        self.samples.push(sample);
        Ok(())
    }

    /// `t⁻¹ Σ_s ∇f_s(θ)`; the result keeps `θ`'s shape.
    pub fn gradient(&self, theta: &Params) -> Result<Params> {
        self.gradient_with(theta, self.exec)
    }

    pub fn gradient_with(&self, theta: &Params, exec: Execution) -> Result<Params> {
        if self.samples.is_empty() {
            return Err(Error::NoData);
        }
        if theta.shape().len() != self.dim {
            return Err(Error::shape(self.dim, theta.shape()));
        }
        let th = theta.as_slice();
        let loss = self.loss;
        let dim = self.dim;
        let theta_view = ArrayView1::from(th);
        let partials = match &self.dense_rows {
            // Same per-sample arithmetic as below, read from one contiguous buffer.
            Some(rows) => {
                let n = self.samples.len();
                exec::map_range(exec, n.div_ceil(REPLAY_CHUNK), |c| {
                    let lo = c * REPLAY_CHUNK;
                    let hi = (lo + REPLAY_CHUNK).min(n);
                    let mut acc = vec![0.0; dim];
                    for (x, s) in rows[lo * dim..hi * dim]
                        .chunks_exact(dim)
                        .zip(&self.samples[lo..hi])
                    {
                        let x = ArrayView1::from(x);
                        let coef = loss.derivative(s.y, x.dot(&theta_view));
                        acc.iter_mut()
                            .zip(x.iter())
                            .for_each(|(o, v)| *o += coef * v);
                    }
                    acc
                })
            }
            None => exec::map_chunks(exec, &self.samples, REPLAY_CHUNK, |chunk| {
                let mut acc = vec![0.0; dim];
                for s in chunk {
                    let coef = loss.derivative(s.y, s.x.dot(th));
                    s.x.add_scaled_to(&mut acc, coef);
                }
                acc
            }),
        };
        let mut total = Array1::<f64>::zeros(dim);
        for p in partials {
            total += &Array1::from(p);
        }
        total /= self.samples.len() as f64;
        Params::with_shape(theta.shape(), total)
    }

    /// `t⁻¹ Σ_s f_s(θ)`.
    pub fn average_loss(&self, theta: &Params) -> Result<f64> {
        if self.samples.is_empty() {
            return Err(Error::NoData);
        }
        let th = theta.as_slice();
        let loss = self.loss;
        let partials = exec::map_chunks(self.exec, &self.samples, REPLAY_CHUNK, |chunk| {
            chunk
                .iter()
                .map(|s| loss.value(s.y, s.x.dot(th)))
                .sum::<f64>()
        });
        Ok(partials.iter().sum::<f64>() / self.samples.len() as f64)
    }
}

/// Uniform front over the three aggregators.
#[derive(Debug, Clone)]
pub enum GradientOracle {
    Lasso(LassoStats),
    Mc(McStats),
    Replay(ReplayStats),
}

impl GradientOracle {
    pub fn observe(&mut self, sample: &Sample) -> Result<()> {
        match (self, sample) {
            (GradientOracle::Lasso(s), Sample::Lasso(x)) => s.update(x),
            (GradientOracle::Mc(s), Sample::Mc(x)) => s.update(x),
            (GradientOracle::Replay(s), Sample::Labeled(x)) => s.push(x.clone()),
            (oracle, sample) => Err(Error::InvalidArgument(format!(
                "{} oracle cannot consume a {} sample",
                oracle.kind_name(),
                match sample {
                    Sample::Lasso(_) => "lasso",
                    Sample::Mc(_) => "matrix-completion",
                    Sample::Labeled(_) => "labelled",
                }
            ))),
        }
    }

    pub fn gradient(&self, theta: &Params) -> Result<Gradient> {
        match self {
            GradientOracle::Lasso(s) => s.gradient(theta).map(Gradient::Dense),
            GradientOracle::Mc(s) => s.gradient(theta).map(Gradient::Sparse),
            GradientOracle::Replay(s) => s.gradient(theta).map(Gradient::Dense),
        }
    }

    pub fn count(&self) -> usize {
        match self {
            GradientOracle::Lasso(s) => s.count(),
            GradientOracle::Mc(s) => s.count(),
            GradientOracle::Replay(s) => s.count(),
        }
    }

    pub fn saturated(&self) -> bool {
        matches!(self, GradientOracle::Mc(s) if s.saturated())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            GradientOracle::Lasso(_) => "lasso",
            GradientOracle::Mc(_) => "matrix-completion",
            GradientOracle::Replay(_) => "replay",
        }
    }
}
