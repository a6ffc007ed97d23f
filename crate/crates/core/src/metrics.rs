//! Quantities the convergence guarantees are stated in: duality gaps, the
//! anytime gap `h_t`, average regret, gradient errors, and log-log rate fits.

use serde::{Deserialize, Serialize};

use crate::atoms::Atom;
use crate::error::{Error, Result};
use crate::lmo::{top_singular_pair, PowerIterConfig};
use crate::params::{Gradient, Params};
use crate::solvers::{StepKind, StepRecord};

/// Reporting floor for `h_t` when `f*` is only a numerical reference.
pub const PRIMAL_GAP_FLOOR: f64 = -1e-9;

/// Metrics evaluated at the played iterate of one round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Evaluation {
    pub round: usize,
    /// Solver step index of the round's first step.
    pub step: usize,
    pub f_value: Option<f64>,
    pub h: Option<f64>,
    /// `h` hit [`PRIMAL_GAP_FLOOR`].
    pub h_clamped: bool,
    pub grad_err_inf: Option<f64>,
    pub grad_err_op: Option<f64>,
}

/// Computes per-round metrics for a played iterate and its surrogate gradient.
pub trait Evaluator {
    fn evaluate(&self, theta: &Params, ghat: &Gradient) -> Evaluation;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cadence {
    Every,
    /// Rounds 1, 2, 4, 8, … plus the final round.
    #[default]
    Geometric,
}

impl Cadence {
    pub fn is_checkpoint(self, round: usize, horizon: usize) -> bool {
        match self {
            Cadence::Every => true,
            Cadence::Geometric => round.is_power_of_two() || round == horizon,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub records: Vec<StepRecord>,
    pub evaluations: Vec<Evaluation>,
    pub rounds_completed: usize,
    /// The sample stream ran dry before `horizon · batch` samples.
    pub truncated: bool,
    /// Steps after which `n_t < ⌈t/2⌉` (O-AW only).
    pub drop_lemma_violations: usize,
    pub lmo_unconverged: usize,
    /// The matrix-completion link exponent was clamped at least once.
    pub link_saturated: bool,
    pub wall_clock_ns: u128,
}

impl Trace {
    pub fn count(&self, kind: StepKind) -> usize {
        self.records.iter().filter(|r| r.kind == kind).count()
    }

    /// `(round, h_t)` pairs at the evaluated rounds.
    pub fn h_series(&self) -> Vec<(f64, f64)> {
        self.evaluations
            .iter()
            .filter_map(|e| e.h.map(|h| (e.round as f64, h)))
            .collect()
    }

    pub fn grad_err_series(&self) -> Vec<(f64, f64)> {
        self.evaluations
            .iter()
            .filter_map(|e| e.grad_err_inf.map(|g| (e.round as f64, g)))
            .collect()
    }

    pub fn final_h(&self) -> Option<f64> {
        self.evaluations.iter().rev().find_map(|e| e.h)
    }

    pub fn f_values(&self) -> Vec<f64> {
        self.evaluations.iter().filter_map(|e| e.f_value).collect()
    }
}

/// `h = f(θ_t) − f*`, floored at [`PRIMAL_GAP_FLOOR`]; the flag reports the floor.
pub fn primal_gap(f_value: f64, f_star: f64) -> (f64, bool) {
    let h = f_value - f_star;
    if h < PRIMAL_GAP_FLOOR {
        (PRIMAL_GAP_FLOOR, true)
    } else {
        (h, false)
    }
}

/// `T⁻¹ Σ_t f(θ_t) − f*`.
pub fn average_regret(f_values: &[f64], f_star: f64) -> Result<f64> {
    if f_values.is_empty() {
        return Err(Error::InvalidArgument("regret of an empty sequence".into()));
    }
    Ok(f_values.iter().sum::<f64>() / f_values.len() as f64 - f_star)
}

/// `⟨ĝ, θ − a⟩`.
pub fn duality_gap_fw(ghat: &Gradient, theta: &Params, atom: &Atom) -> Result<f64> {
    Ok(ghat.dot(theta)? - atom.dot(ghat)?)
}

/// `⟨ĝ, a_AW − a_FW⟩`.
pub fn duality_gap_aw(ghat: &Gradient, away: &Atom, fw: &Atom) -> Result<f64> {
    Ok(away.dot(ghat)? - fw.dot(ghat)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradNorm {
    /// Entrywise max.
    Inf,
    /// Largest singular value (matrix shapes only).
    Operator,
}

/// `‖ĝ − g‖` in the requested norm.
pub fn grad_error(ghat: &Gradient, g_true: &Gradient, norm: GradNorm) -> Result<f64> {
    if ghat.shape() != g_true.shape() {
        return Err(Error::shape(g_true.shape(), ghat.shape()));
    }
    let mut diff = ghat.to_dense();
    *diff.data_mut() -= g_true.to_dense().data();
    match norm {
        GradNorm::Inf => Ok(diff.max_abs()),
        GradNorm::Operator => {
            let m = diff.as_matrix().ok_or_else(|| {
                Error::InvalidArgument("operator norm of a vector-shaped gradient".into())
            })?;
            let cfg = PowerIterConfig {
                tol: 1e-11,
                max_iter: 20_000,
                ..PowerIterConfig::default()
            };
            Ok(top_singular_pair(&m, &cfg).sigma)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    /// Points inside the window dropped for being nonpositive.
    pub excluded: usize,
    pub window: (f64, f64),
}

/// Least-squares fit of `log value` on `log t` over `t ∈ [lo, hi]`, needing at
/// least five positive points.
pub fn loglog_slope(series: &[(f64, f64)], window: (f64, f64)) -> Result<SlopeFit> {
    let (lo, hi) = window;
    let in_window: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, _)| t >= lo && t <= hi)
        .collect();
    let positive = in_window.iter().filter(|p| p.1 > 0.0).count();
    if positive < 5 {
        return Err(Error::InvalidArgument(format!(
            "slope fit over [{lo}, {hi}] needs >= 5 positive points, got {positive} ({} nonpositive excluded)",
            in_window.len() - positive
        )));
    }
    let mut fit = loglog_fit(&in_window)?;
    fit.window = window;
    Ok(fit)
}

/// Least-squares fit of `log value` on `log t` over all points; nonpositive values are dropped.
pub fn loglog_fit(points: &[(f64, f64)]) -> Result<SlopeFit> {
    let excluded = points.iter().filter(|p| !(p.1 > 0.0)).count();
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.1 > 0.0 && p.0 > 0.0)
        .map(|&(t, v)| (t.ln(), v.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "slope fit needs >= 2 positive points, got {}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument(
            "slope fit needs at least two distinct t".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    Ok(SlopeFit {
        slope,
        intercept,
        r2,
        points: pts.len(),
        excluded,
        window: (lo, hi),
    })
}

/// `min g_t^FW` over rounds `⌊T/2⌋+1 ..= T`.
pub fn min_gap_tail(records: &[StepRecord], horizon: usize) -> Result<f64> {
    let last = records.iter().map(|r| r.round).max().unwrap_or(0);
    if horizon == 0 || last < horizon {
        return Err(Error::InvalidArgument(format!(
            "trace covers {last} rounds, tail minimum needs {horizon}"
        )));
    }
    let lo = horizon / 2;
    Ok(records
        .iter()
        .filter(|r| r.round > lo && r.round <= horizon)
        .map(|r| r.g_fw)
        .fold(f64::INFINITY, f64::min))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::atoms::Sign;
    use crate::params::{Shape, SparseMatrix};
    use proptest::prelude::*;

    fn record(round: usize, g_fw: f64) -> StepRecord {
        StepRecord {
            t: round,
            round,
            g_fw,
            ..StepRecord::default()
        }
    }

    #[test]
    fn primal_gap_examples() {
        assert_eq!(primal_gap(3.0, 1.0), (2.0, false));
        assert_eq!(primal_gap(1.0, 1.0), (0.0, false));
        assert_eq!(primal_gap(1.0, 1.0 + 1e-6), (PRIMAL_GAP_FLOOR, true));
    }

    #[test]
    fn regret_examples() {
        assert_eq!(average_regret(&[2.0, 2.0, 2.0], 2.0).unwrap(), 0.0);
        assert_eq!(average_regret(&[3.0, 1.0], 1.0).unwrap(), 1.0);
        assert!(average_regret(&[], 0.0).is_err());
    }

    #[test]
    fn duality_gap_examples() {
        let theta = Params::from_vec(vec![0.3, -0.2]);
        let atom = Atom::SignedBasis {
            index: 1,
            sign: Sign::Minus,
            radius: 1.0,
        };
        let zero = Gradient::Dense(Params::zeros(Shape::Vector(2)));
        assert_eq!(duality_gap_fw(&zero, &theta, &atom).unwrap(), 0.0);
        let g = Gradient::Dense(Params::from_vec(vec![1.0, 2.0]));
        let at_atom = atom.to_params(Shape::Vector(2)).unwrap();
        assert_eq!(duality_gap_fw(&g, &at_atom, &atom).unwrap(), 0.0);
        let other = Atom::SignedBasis {
            index: 0,
            sign: Sign::Plus,
            radius: 1.0,
        };
        assert_eq!(duality_gap_aw(&g, &other, &atom).unwrap(), 1.0 - (-2.0));
    }

    #[test]
    fn sparse_gap_matches_densified() {
        let s = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.5), (1, 2, -0.5), (1, 0, 2.0)])
            .unwrap();
        let theta =
            Params::with_shape(Shape::Matrix(2, 3), ndarray::Array1::linspace(-1.0, 1.0, 6))
                .unwrap();
        let atom = Atom::RankOne {
            u: ndarray::array![0.6, -0.8],
            v: ndarray::array![0.0, 0.6, 0.8],
            radius: 3.0,
            negated: true,
        };
        let sparse = duality_gap_fw(&Gradient::Sparse(s.clone()), &theta, &atom).unwrap();
        let dense_g = s.to_dense();
        let dense = dense_g.dot(&theta).unwrap()
            - dense_g
                .dot(&atom.to_params(Shape::Matrix(2, 3)).unwrap())
                .unwrap();
        assert!((sparse - dense).abs() < 1e-10);
    }

    #[test]
    fn grad_error_examples() {
        let a = Gradient::Dense(Params::from_vec(vec![1.0, -3.0]));
        let b = Gradient::Dense(Params::from_vec(vec![1.0, 0.0]));
        assert_eq!(grad_error(&a, &a, GradNorm::Inf).unwrap(), 0.0);
        assert_eq!(grad_error(&a, &b, GradNorm::Inf).unwrap(), 3.0);
        assert!(grad_error(&a, &b, GradNorm::Operator).is_err());
    }

    #[test]
    fn slope_of_exact_power_laws() {
        let inv: Vec<(f64, f64)> = (10..=1000).map(|t| (t as f64, 1.0 / t as f64)).collect();
        let fit = loglog_slope(&inv, (10.0, 1000.0)).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-9);
        let sqrt: Vec<(f64, f64)> = (10..=1000)
            .map(|t| (t as f64, (t as f64).powf(-0.5)))
            .collect();
        assert!((loglog_slope(&sqrt, (10.0, 1000.0)).unwrap().slope + 0.5).abs() < 1e-9);
    }

    #[test]
    fn slope_of_log_over_t() {
        let series: Vec<(f64, f64)> = (0..=60)
            .map(|i| 10f64.powf(2.0 + 3.0 * i as f64 / 60.0))
            .map(|t| (t, 3.0 * t.ln() / t))
            .collect();
        let fit = loglog_slope(&series, (1e2, 1e5)).unwrap();
        assert!(fit.slope > -1.05 && fit.slope < -0.80, "{}", fit.slope);
    }

    #[test]
    fn slope_errors() {
        let few: Vec<(f64, f64)> = (1..=4).map(|t| (t as f64, 1.0)).collect();
        assert!(loglog_slope(&few, (1.0, 4.0)).is_err());
        let mut with_zero: Vec<(f64, f64)> = (1..=8).map(|t| (t as f64, 1.0 / t as f64)).collect();
        with_zero[3].1 = 0.0;
        let fit = loglog_slope(&with_zero, (1.0, 8.0)).unwrap();
        assert_eq!(fit.excluded, 1);
        assert_eq!(fit.points, 7);
    }

    #[test]
    fn min_gap_tail_examples() {
        let recs: Vec<StepRecord> = [5.0, 4.0, 3.0, 2.0]
            .iter()
            .enumerate()
            .map(|(i, &g)| record(i + 1, g))
            .collect();
        assert_eq!(min_gap_tail(&recs, 4).unwrap(), 2.0);
        let flat: Vec<StepRecord> = (1..=10).map(|t| record(t, 0.7)).collect();
        assert_eq!(min_gap_tail(&flat, 10).unwrap(), 0.7);
        assert!(min_gap_tail(&flat, 11).is_err());
    }

    #[test]
    fn geometric_cadence() {
        let rounds: Vec<usize> = (1..=20)
            .filter(|&r| Cadence::Geometric.is_checkpoint(r, 20))
            .collect();
        assert_eq!(rounds, vec![1, 2, 4, 8, 16, 20]);
    }

    proptest! {
        #[test]
        fn min_gap_tail_matches_scan(gaps in proptest::collection::vec(0.0f64..10.0, 2..200)) {
            let t = gaps.len();
            let recs: Vec<StepRecord> = gaps.iter().enumerate().map(|(i, &g)| record(i + 1, g)).collect();
            let scan = gaps[t / 2..].iter().copied().fold(f64::INFINITY, f64::min);
            prop_assert_eq!(min_gap_tail(&recs, t).unwrap(), scan);
        }

        #[test]
        fn appending_smaller_tail_value_never_increases_minimum(
            gaps in proptest::collection::vec(0.1f64..10.0, 4..100),
            shrink in 0.0f64..1.0,
        ) {
            let t = gaps.len();
            let mut recs: Vec<StepRecord> = gaps.iter().enumerate().map(|(i, &g)| record(i + 1, g)).collect();
            let before = min_gap_tail(&recs, t).unwrap();
            recs.push(StepRecord { t, round: t, g_fw: before * shrink, ..StepRecord::default() });
            prop_assert!(min_gap_tail(&recs, t).unwrap() <= before);
        }
    }
}
