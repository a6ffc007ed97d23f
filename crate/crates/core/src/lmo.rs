//! Linear minimization oracles `arg min_{a ∈ C} ⟨a, g⟩`.
//!
//! Ties are broken towards the lowest index and `sign(0)` is taken as `+1`, so
//! every oracle is a deterministic function of its input.

use std::sync::Arc;

use ndarray::{Array1, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::atoms::{Atom, Sign};
use crate::error::{Error, Result};
use crate::linalg::{norm2, LinearOperator};
use crate::params::{Gradient, Params, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerIterConfig {
    /// Residual threshold relative to `max(1, ‖M‖_F)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIterConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            seed: 0x5eed,
        }
    }
}

impl PowerIterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(Error::InvalidArgument(format!(
                "power iteration needs tol > 0 and max_iter >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintSet {
    /// `{θ ∈ Rⁿ : ‖θ‖₁ ≤ radius}`.
    L1Ball { radius: f64, dim: usize },
    /// Convex hull of an explicit vertex list.
    VertexPolytope { vertices: Vec<Arc<Array1<f64>>> },
    /// `{θ ∈ R^{rows×cols} : ‖θ‖_{σ,1} ≤ radius}`.
    TraceNormBall {
        radius: f64,
        rows: usize,
        cols: usize,
        power: PowerIterConfig,
    },
}

impl ConstraintSet {
    pub fn l1_ball(radius: f64, dim: usize) -> Result<Self> {
        let c = ConstraintSet::L1Ball { radius, dim };
        c.validate()?;
        Ok(c)
    }

    pub fn polytope(vertices: Vec<Vec<f64>>) -> Result<Self> {
        let c = ConstraintSet::VertexPolytope {
            vertices: vertices
                .into_iter()
                .map(|v| Arc::new(Array1::from(v)))
                .collect(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn trace_ball(radius: f64, rows: usize, cols: usize) -> Result<Self> {
        let c = ConstraintSet::TraceNormBall {
            radius,
            rows,
            cols,
            power: PowerIterConfig::default(),
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ConstraintSet::L1Ball { radius, dim } => {
                if !(*radius > 0.0) || !radius.is_finite() || *dim == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "l1 ball needs radius > 0 and dim >= 1, got r={radius}, n={dim}"
                    )));
                }
            }
            ConstraintSet::VertexPolytope { vertices } => {
                let first = vertices.first().ok_or_else(|| {
                    Error::InvalidArgument("polytope needs at least one vertex".into())
                })?;
                if first.is_empty() {
                    return Err(Error::InvalidArgument(
                        "polytope vertices must be non-empty".into(),
                    ));
                }
                if let Some((i, v)) = vertices
                    .iter()
                    .enumerate()
                    .find(|(_, v)| v.len() != first.len())
                {
                    return Err(Error::shape(
                        first.len(),
                        format!("vertex {i} of length {}", v.len()),
                    ));
                }
                if vertices.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
                    return Err(Error::NonFinite("polytope vertices".into()));
                }
            }
            ConstraintSet::TraceNormBall {
                radius,
                rows,
                cols,
                power,
            } => {
                if !(*radius > 0.0) || !radius.is_finite() || *rows == 0 || *cols == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "trace-norm ball needs R > 0 and positive dims, got R={radius}, {rows}x{cols}"
                    )));
                }
                power.validate()?;
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> Shape {
        match self {
            ConstraintSet::L1Ball { dim, .. } => Shape::Vector(*dim),
            ConstraintSet::VertexPolytope { vertices } => Shape::Vector(vertices[0].len()),
            ConstraintSet::TraceNormBall { rows, cols, .. } => Shape::Matrix(*rows, *cols),
        }
    }

    /// Whether the set is given by a finite atom list (needed for away steps).
    pub fn is_atomic(&self) -> bool {
        !matches!(self, ConstraintSet::TraceNormBall { .. })
    }

    /// Explicit atom list for atomic sets.
    pub fn atoms(&self) -> Option<Vec<Atom>> {
        match self {
            ConstraintSet::L1Ball { radius, dim } => Some(
                (0..*dim)
                    .flat_map(|index| {
                        [Sign::Minus, Sign::Plus].map(|sign| Atom::SignedBasis {
                            index,
                            sign,
                            radius: *radius,
                        })
                    })
                    .collect(),
            ),
            ConstraintSet::VertexPolytope { vertices } => Some(
                vertices
                    .iter()
                    .enumerate()
                    .map(|(id, point)| Atom::Vertex {
                        id,
                        point: point.clone(),
                    })
                    .collect(),
            ),
            ConstraintSet::TraceNormBall { .. } => None,
        }
    }

    /// Linear minimization over the set.
    pub fn lmo(&self, g: &Gradient) -> Result<Atom> {
        self.lmo_with_status(g).map(|(a, _)| a)
    }

    /// Linear minimization plus a convergence flag (always `true` for exact oracles).
    pub fn lmo_with_status(&self, g: &Gradient) -> Result<(Atom, bool)> {
        let shape = self.shape();
        if g.shape() != shape {
            return Err(Error::shape(shape, g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient passed to the LMO".into()));
        }
        match self {
            ConstraintSet::L1Ball { radius, .. } => {
                let dense = dense_vector(g);
                Ok((lmo_l1(dense.as_slice(), *radius)?, true))
            }
            ConstraintSet::VertexPolytope { vertices } => {
                let dense = dense_vector(g);
                Ok((lmo_vertices(dense.data().view(), vertices)?, true))
            }
            ConstraintSet::TraceNormBall { radius, power, .. } => {
                let (atom, pair) = lmo_trace(g, *radius, power)?;
                Ok((atom, pair.converged))
            }
        }
    }
}

fn dense_vector(g: &Gradient) -> std::borrow::Cow<'_, Params> {
    match g {
        Gradient::Dense(p) => std::borrow::Cow::Borrowed(p),
        Gradient::Sparse(s) => std::borrow::Cow::Owned(s.to_dense()),
    }
}

/// `−r · sign(g_i) · e_i` with `i` the smallest index maximizing `|g_i|`.
pub fn lmo_l1(g: &[f64], radius: f64) -> Result<Atom> {
    let first = g
        .first()
        .ok_or_else(|| Error::InvalidArgument("l1 oracle on an empty gradient".into()))?;
    let (mut index, mut best) = (0, first.abs());
    for (j, x) in g.iter().enumerate().skip(1) {
        if x.abs() > best {
            index = j;
            best = x.abs();
        }
    }
    Ok(Atom::SignedBasis {
        index,
        sign: Sign::of(g[index]).flip(),
        radius,
    })
}

/// Vertex minimizing `⟨v, g⟩`, ties to the lowest id.
pub fn lmo_vertices(g: ArrayView1<'_, f64>, vertices: &[Arc<Array1<f64>>]) -> Result<Atom> {
    let first = vertices
        .first()
        .ok_or_else(|| Error::InvalidArgument("vertex oracle on an empty vertex list".into()))?;
    if first.len() != g.len() {
        return Err(Error::shape(first.len(), g.len()));
    }
    let mut id = 0;
    let mut best = first.dot(&g);
    for (i, v) in vertices.iter().enumerate().skip(1) {
        let value = v.dot(&g);
        if value < best {
            id = i;
            best = value;
        }
    }
    Ok(Atom::Vertex {
        id,
        point: vertices[id].clone(),
    })
}

/// Largest side for which the power iteration runs on an explicit Gram matrix.
pub const GRAM_MAX_SIDE: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SingularTriplet {
    pub u: Array1<f64>,
    pub sigma: f64,
    pub v: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// `max(‖M v − σ u‖₂, ‖Mᵀ u − σ v‖₂)` at the returned pair.
    pub residual: f64,
}

impl SingularTriplet {
    fn trivial(
        rows: usize,
        cols: usize,
        converged: bool,
        iterations: usize,
        residual: f64,
    ) -> Self {
        let mut u = Array1::zeros(rows);
        let mut v = Array1::zeros(cols);
        u[0] = 1.0;
        v[0] = 1.0;
        SingularTriplet {
            u,
            sigma: 0.0,
            v,
            converged,
            iterations,
            residual,
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    let mut x: Array1<f64> = (0..len).map(|_| StandardNormal.sample(&mut *rng)).collect();
    let n = norm2(x.view());
    x /= n;
    x
}

/// Leading singular pair by power iteration on `MᵀM` from a seeded random start.
///
/// Stops once both residuals are at most `tol · max(1, ‖M‖_F)`; otherwise returns
/// the best iterate seen with `converged = false`.
///
/// When the smaller side is short relative to the stored entries, the iteration is
/// run on the smaller of `MᵀM` and `MMᵀ`, formed once. Started from `M v₀`, the
/// `MMᵀ` iteration produces the images under `M` of the `MᵀM` iterates, so both
/// routes follow the same sequence.
pub fn top_singular_pair<M: LinearOperator + ?Sized>(
    m: &M,
    cfg: &PowerIterConfig,
) -> SingularTriplet {
    let (rows, cols) = (m.rows(), m.cols());
    let frob = m.frobenius_norm();
    if frob == 0.0 {
        return SingularTriplet::trivial(rows, cols, true, 0, 0.0);
    }
    let threshold = cfg.tol * frob.max(1.0);
    let side = rows.min(cols);
    if side <= GRAM_MAX_SIDE && side * side <= 2 * m.stored_entries() {
        gram_power_iteration(m, cfg, threshold)
    } else {
        operator_power_iteration(m, cfg, threshold)
    }
}

fn finish<M: LinearOperator + ?Sized>(
    m: &M,
    v: Array1<f64>,
    threshold: f64,
    iterations: usize,
) -> Option<SingularTriplet> {
    let w = m.apply(v.view());
    let sigma = norm2(w.view());
    if sigma == 0.0 {
        return None;
    }
    let u = w / sigma;
    let z = m.apply_transpose(u.view());
    let residual = norm2((&z - &(sigma * &v)).view());
    Some(SingularTriplet {
        u,
        sigma,
        v,
        converged: residual <= threshold,
        iterations,
        residual,
    })
}

fn operator_power_iteration<M: LinearOperator + ?Sized>(
    m: &M,
    cfg: &PowerIterConfig,
    threshold: f64,
) -> SingularTriplet {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut v = random_unit(&mut rng, m.cols());
    let mut best: Option<SingularTriplet> = None;
    for iteration in 1..=cfg.max_iter {
        let Some(pair) = finish(m, v.clone(), threshold, iteration) else {
            // start landed in the null space
            v = random_unit(&mut rng, m.cols());
            continue;
        };
        let z = m.apply_transpose(pair.u.view());
        let converged = pair.converged;
        if converged || best.as_ref().is_none_or(|b| pair.residual < b.residual) {
            best = Some(pair);
        }
        if converged {
            break;
        }
        let zn = norm2(z.view());
        v = z / zn;
    }
    best.unwrap_or_else(|| {
        SingularTriplet::trivial(m.rows(), m.cols(), false, cfg.max_iter, f64::INFINITY)
    })
}

fn gram_power_iteration<M: LinearOperator + ?Sized>(
    m: &M,
    cfg: &PowerIterConfig,
    threshold: f64,
) -> SingularTriplet {
    let dense = m.to_dense_matrix();
    let row_side = m.rows() <= m.cols();
    let gram = if row_side {
        dense.dot(&dense.t())
    } else {
        dense.t().dot(&dense)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = |rng: &mut ChaCha8Rng| {
        let v0 = random_unit(rng, m.cols());
        if row_side {
            let x = dense.dot(&v0);
            let n = norm2(x.view());
            x / n
        } else {
            v0
        }
    };

    let mut x = start(&mut rng);
    // (x, gram-side residual, iteration)
    let mut best: Option<(Array1<f64>, f64, usize)> = None;
    let mut converged_at = None;
    for iteration in 1..=cfg.max_iter {
        if !x.iter().all(|c| c.is_finite()) {
            x = start(&mut rng);
            continue;
        }
        let y = gram.dot(&x);
        let lambda = x.dot(&y);
        if !(lambda > 0.0) {
            x = start(&mut rng);
            continue;
        }
        // With x unit and σ² = xᵀKx, the residual on the far side is ‖Kx − σ²x‖ / σ.
        let residual = norm2((&y - &(lambda * &x)).view()) / lambda.sqrt();
        if best.as_ref().is_none_or(|b| residual < b.1) {
            best = Some((x.clone(), residual, iteration));
        }
        if residual <= threshold {
            converged_at = Some(iteration);
            break;
        }
        let yn = norm2(y.view());
        x = y / yn;
    }
    let Some((x, _, iteration)) = best else {
        return SingularTriplet::trivial(m.rows(), m.cols(), false, cfg.max_iter, f64::INFINITY);
    };
    let iterations = converged_at.unwrap_or(iteration);
    let triplet = if row_side {
        let z = m.apply_transpose(x.view());
        let sigma = norm2(z.view());
        if sigma == 0.0 {
            None
        } else {
            let v = z / sigma;
            let r = norm2((&m.apply(v.view()) - &(sigma * &x)).view());
            Some(SingularTriplet {
                u: x,
                sigma,
                v,
                converged: r <= threshold,
                iterations,
                residual: r,
            })
        }
    } else {
        finish(m, x, threshold, iterations)
    };
    triplet.unwrap_or_else(|| {
        SingularTriplet::trivial(m.rows(), m.cols(), false, iterations, f64::INFINITY)
    })
}

/// `−R · u₁ v₁ᵀ` from the leading singular pair of `G`.
pub fn lmo_trace(
    g: &Gradient,
    radius: f64,
    cfg: &PowerIterConfig,
) -> Result<(Atom, SingularTriplet)> {
    let pair = match g {
        Gradient::Dense(d) => {
            let view = d
                .as_matrix()
                .ok_or_else(|| Error::shape("matrix gradient", d.shape()))?;
            top_singular_pair(&view, cfg)
        }
        Gradient::Sparse(s) => top_singular_pair(s, cfg),
    };
    let atom = Atom::RankOne {
        u: pair.u.clone(),
        v: pair.v.clone(),
        radius,
        negated: true,
    };
    Ok((atom, pair))
}
