//! Atoms (extreme points in compact form) and the weighted active set kept by O-AW.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::params::{Gradient, Params, Shape};

/// Weights at or below this are dropped from the active set.
pub const PURGE_THRESHOLD: f64 = 1e-12;

/// Slack allowed when comparing a step against `gamma_max`.
pub const GAMMA_MAX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Minus,
    Plus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Minus => -1.0,
            Sign::Plus => 1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Minus => Sign::Plus,
            Sign::Plus => Sign::Minus,
        }
    }

    /// Sign of `x` with `sign(0) = +1`.
    pub fn of(x: f64) -> Self {
        if x < 0.0 {
            Sign::Minus
        } else {
            Sign::Plus
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Atom {
    /// `sign · radius · e_index`.
    SignedBasis {
        index: usize,
        sign: Sign,
        radius: f64,
    },
    /// Entry `id` of a vertex table; the point is shared with the table.
    Vertex { id: usize, point: Arc<Array1<f64>> },
    /// `(−1 if negated) · radius · u vᵀ` with unit `u`, `v`.
    RankOne {
        u: Array1<f64>,
        v: Array1<f64>,
        radius: f64,
        negated: bool,
    },
}

/// Identity of an atom inside an [`ActiveSet`].
///
/// Rank-one atoms get a fresh serial on insertion and are never merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AtomKey {
    SignedBasis { index: usize, sign: Sign },
    Vertex(usize),
    RankOne(u64),
}

impl std::fmt::Display for AtomKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AtomKey::SignedBasis { index, sign } => {
                let s = if *sign == Sign::Plus { '+' } else { '-' };
                write!(f, "{s}e{index}")
            }
            AtomKey::Vertex(id) => write!(f, "v{id}"),
            AtomKey::RankOne(serial) => write!(f, "r{serial}"),
        }
    }
}

impl Atom {
    /// Canonical key, `None` for rank-one atoms.
    pub fn canonical_key(&self) -> Option<AtomKey> {
        match self {
            Atom::SignedBasis { index, sign, .. } => Some(AtomKey::SignedBasis {
                index: *index,
                sign: *sign,
            }),
            Atom::Vertex { id, .. } => Some(AtomKey::Vertex(*id)),
            Atom::RankOne { .. } => None,
        }
    }

    pub fn check_shape(&self, shape: Shape) -> Result<()> {
        let ok = match (self, shape) {
            (Atom::SignedBasis { index, .. }, _) => *index < shape.len(),
            (Atom::Vertex { point, .. }, Shape::Vector(n)) => point.len() == n,
            (Atom::Vertex { .. }, Shape::Matrix(..)) => false,
            (Atom::RankOne { u, v, .. }, Shape::Matrix(m1, m2)) => u.len() == m1 && v.len() == m2,
            (Atom::RankOne { .. }, Shape::Vector(_)) => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: format!("{shape:?}"),
                found: self.describe(),
            })
        }
    }

    fn describe(&self) -> String {
        match self {
            Atom::SignedBasis { index, .. } => format!("signed basis atom at index {index}"),
            Atom::Vertex { id, point } => format!("vertex {id} of dimension {}", point.len()),
            Atom::RankOne { u, v, .. } => format!("rank-one atom {}x{}", u.len(), v.len()),
        }
    }

    /// ⟨atom, G⟩. Rank-one atoms contract `uᵀ G v` without densifying.
    pub fn dot(&self, g: &Gradient) -> Result<f64> {
        self.check_shape(g.shape())?;
        match (self, g) {
            (
                Atom::SignedBasis {
                    index,
                    sign,
                    radius,
                },
                Gradient::Dense(d),
            ) => Ok(sign.value() * radius * d.as_slice()[*index]),
            (
                Atom::SignedBasis {
                    index,
                    sign,
                    radius,
                },
                Gradient::Sparse(s),
            ) => {
                let cols = s.dims().1;
                let (r, c) = (index / cols, index % cols);
                let v = s
                    .entries()
                    .binary_search_by_key(&(r, c), |e| (e.0, e.1))
                    .map(|i| s.entries()[i].2)
                    .unwrap_or(0.0);
                Ok(sign.value() * radius * v)
            }
            (Atom::Vertex { point, .. }, Gradient::Dense(d)) => Ok(point.dot(d.data())),
            (Atom::Vertex { .. }, Gradient::Sparse(_)) => unreachable!("checked by check_shape"),
            (
                Atom::RankOne {
                    u,
                    v,
                    radius,
                    negated,
                },
                Gradient::Dense(d),
            ) => {
                let m = d.as_matrix().expect("matrix gradient");
                let scale = if *negated { -radius } else { *radius };
                Ok(scale * u.dot(&m.dot(v)))
            }
            (
                Atom::RankOne {
                    u,
                    v,
                    radius,
                    negated,
                },
                Gradient::Sparse(s),
            ) => {
                let scale = if *negated { -radius } else { *radius };
                let bilinear: f64 = s.entries().iter().map(|&(r, c, x)| u[r] * x * v[c]).sum();
                Ok(scale * bilinear)
            }
        }
    }

    /// ⟨atom, θ⟩.
    pub fn dot_params(&self, theta: &Params) -> Result<f64> {
        self.check_shape(theta.shape())?;
        Ok(match self {
            Atom::SignedBasis {
                index,
                sign,
                radius,
            } => sign.value() * radius * theta.as_slice()[*index],
            Atom::Vertex { point, .. } => point.dot(theta.data()),
            Atom::RankOne {
                u,
                v,
                radius,
                negated,
            } => {
                let m = theta.as_matrix().expect("matrix params");
                let scale = if *negated { -radius } else { *radius };
                scale * u.dot(&m.dot(v))
            }
        })
    }

    /// `out += coef · atom`.
    pub fn add_scaled_to(&self, out: &mut Params, coef: f64) -> Result<()> {
        self.check_shape(out.shape())?;
        match self {
            Atom::SignedBasis {
                index,
                sign,
                radius,
            } => {
                out.data_mut()[*index] += coef * sign.value() * radius;
            }
            Atom::Vertex { point, .. } => {
                out.data_mut().scaled_add(coef, point);
            }
            Atom::RankOne {
                u,
                v,
                radius,
                negated,
            } => {
                let scale = coef * if *negated { -radius } else { *radius };
                let mut m = out.as_matrix_mut().expect("matrix params");
                for (i, mut row) in m.rows_mut().into_iter().enumerate() {
                    row.scaled_add(scale * u[i], v);
                }
            }
        }
        Ok(())
    }

    pub fn to_params(&self, shape: Shape) -> Result<Params> {
        let mut p = Params::zeros(shape);
        self.add_scaled_to(&mut p, 1.0)?;
        Ok(p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveEntry {
    pub atom: Atom,
    pub weight: f64,
}

/// Convex-combination decomposition `θ = Σ α_a · a` with `α_a > 0`, `Σ α_a = 1`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActiveSet {
    entries: BTreeMap<AtomKey, ActiveEntry>,
    next_serial: u64,
}

impl ActiveSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weight(&self, key: &AtomKey) -> Option<f64> {
        self.entries.get(key).map(|e| e.weight)
    }

    pub fn get(&self, key: &AtomKey) -> Option<&ActiveEntry> {
        self.entries.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&AtomKey, &ActiveEntry)> {
        self.entries.iter()
    }

    pub fn weight_sum(&self) -> f64 {
        self.entries.values().map(|e| e.weight).sum()
    }

    /// Σ weight · atom; the empty set reconstructs to zero.
    pub fn point(&self, shape: Shape) -> Result<Params> {
        let mut out = Params::zeros(shape);
        for entry in self.entries.values() {
            entry.atom.add_scaled_to(&mut out, entry.weight)?;
        }
        Ok(out)
    }

    /// Largest away step keeping every weight nonnegative: `α / (1 − α)`.
    pub fn gamma_max(&self, key: &AtomKey) -> Result<f64> {
        let alpha = self
            .weight(key)
            .ok_or_else(|| Error::InvalidArgument(format!("atom {key} is not active")))?;
        if self.entries.len() < 2 || alpha >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "away step from atom {key} with weight {alpha}: a lone atom only takes FW steps"
            )));
        }
        Ok(alpha / (1.0 - alpha))
    }

    /// Active atom maximizing ⟨atom, g⟩, ties to the lowest key.
    pub fn away_atom(&self, g: &Gradient) -> Result<Option<(AtomKey, f64)>> {
        let mut best: Option<(AtomKey, f64)> = None;
        for (key, entry) in &self.entries {
            let value = entry.atom.dot(g)?;
            if best.is_none_or(|(_, b)| value > b) {
                best = Some((*key, value));
            }
        }
        Ok(best)
    }

    /// FW update: weights scaled by `1 − γ`, then `γ` added to `atom`.
    /// Returns the key the atom was stored under.
    pub fn apply_fw_step(&mut self, atom: Atom, gamma: f64) -> Result<AtomKey> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "FW step size {gamma} outside (0, 1]"
            )));
        }
        let key = match atom.canonical_key() {
            Some(k) => k,
            None => {
                self.next_serial += 1;
                AtomKey::RankOne(self.next_serial)
            }
        };
        if gamma == 1.0 {
            self.entries.clear();
            self.entries.insert(key, ActiveEntry { atom, weight: 1.0 });
            return Ok(key);
        }
        for entry in self.entries.values_mut() {
            entry.weight *= 1.0 - gamma;
        }
        self.entries
            .entry(key)
            .and_modify(|e| e.weight += gamma)
            .or_insert(ActiveEntry {
                atom,
                weight: gamma,
            });
        self.entries.retain(|_, e| e.weight > PURGE_THRESHOLD);
        self.renormalize();
        Ok(key)
    }

    /// Divides out rounding drift in the weight sum, which is exactly one in exact arithmetic.
    fn renormalize(&mut self) {
        let s = self.weight_sum();
        if s > 0.0 && s != 1.0 {
            for entry in self.entries.values_mut() {
                entry.weight /= s;
            }
        }
    }

    /// Away update: weights scaled by `1 + γ`, then `γ` removed from the away atom.
    /// At `γ = γ_max` the away atom is dropped.
    pub fn apply_away_step(&mut self, key: &AtomKey, gamma: f64) -> Result<()> {
        let gamma_max = self.gamma_max(key)?;
        if !(gamma > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "away step size {gamma} must be positive"
            )));
        }
        if gamma > gamma_max + GAMMA_MAX_TOL {
            return Err(Error::InvariantViolation(format!(
                "away step {gamma} exceeds gamma_max {gamma_max} and leaves the feasible set"
            )));
        }
        for entry in self.entries.values_mut() {
            entry.weight *= 1.0 + gamma;
        }
        let away = self.entries.get_mut(key).expect("checked by gamma_max");
        away.weight -= gamma;
        if (gamma - gamma_max).abs() <= GAMMA_MAX_TOL || away.weight <= PURGE_THRESHOLD {
            self.entries.remove(key);
        }
        self.renormalize();
        Ok(())
    }

    /// Positivity and sum-to-one; returns a description of the first violation.
    pub fn check_weights(&self, sum_tol: f64) -> Result<()> {
        if let Some((k, e)) = self.entries.iter().find(|(_, e)| !(e.weight > 0.0)) {
            return Err(Error::InvariantViolation(format!(
                "atom {k} has weight {}",
                e.weight
            )));
        }
        if !self.entries.is_empty() {
            let s = self.weight_sum();
            if (s - 1.0).abs() > sum_tol {
                return Err(Error::InvariantViolation(format!("weights sum to {s}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(index: usize, sign: Sign) -> Atom {
        Atom::SignedBasis {
            index,
            sign,
            radius: 1.0,
        }
    }

    fn key(index: usize, sign: Sign) -> AtomKey {
        AtomKey::SignedBasis { index, sign }
    }

    fn set_of(entries: &[(Atom, f64)]) -> ActiveSet {
        let mut set = ActiveSet::new();
        for (atom, w) in entries {
            set.entries.insert(
                atom.canonical_key().unwrap(),
                ActiveEntry {
                    atom: atom.clone(),
                    weight: *w,
                },
            );
        }
        set
    }

    #[test]
    fn point_of_empty_set_is_zero() {
        let p = ActiveSet::new().point(Shape::Vector(3)).unwrap();
        assert_eq!(p.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn point_of_single_atom() {
        let set = set_of(&[(
            Atom::SignedBasis {
                index: 0,
                sign: Sign::Plus,
                radius: 2.0,
            },
            1.0,
        )]);
        assert_eq!(set.point(Shape::Vector(2)).unwrap().as_slice(), &[2.0, 0.0]);
    }

    #[test]
    fn point_of_convex_combination() {
        let set = set_of(&[(basis(0, Sign::Plus), 0.75), (basis(1, Sign::Minus), 0.25)]);
        assert_eq!(
            set.point(Shape::Vector(2)).unwrap().as_slice(),
            &[0.75, -0.25]
        );
    }

    #[test]
    fn point_rejects_incompatible_shape() {
        let set = set_of(&[(basis(4, Sign::Plus), 1.0)]);
        assert!(matches!(
            set.point(Shape::Vector(2)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn gamma_max_values() {
        let a = basis(0, Sign::Plus);
        let b = basis(1, Sign::Plus);
        for (w, expected) in [(0.25, 1.0 / 3.0), (0.5, 1.0), (0.1, 1.0 / 9.0)] {
            let set = set_of(&[(a.clone(), 1.0 - w), (b.clone(), w)]);
            let g = set.gamma_max(&key(1, Sign::Plus)).unwrap();
            assert!((g - expected).abs() < 1e-15, "{w}: {g}");
        }
    }

    #[test]
    fn gamma_max_on_lone_atom_is_an_error() {
        let set = set_of(&[(basis(0, Sign::Plus), 1.0)]);
        assert!(set.gamma_max(&key(0, Sign::Plus)).is_err());
    }

    #[test]
    fn fw_step_examples() {
        let (a, b) = (basis(0, Sign::Plus), basis(1, Sign::Plus));
        let mut set = ActiveSet::new();
        set.apply_fw_step(a.clone(), 1.0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.weight(&key(0, Sign::Plus)), Some(1.0));

        set.apply_fw_step(b.clone(), 0.5).unwrap();
        assert_eq!(set.weight(&key(0, Sign::Plus)), Some(0.5));
        assert_eq!(set.weight(&key(1, Sign::Plus)), Some(0.5));

        set.apply_fw_step(a, 0.5).unwrap();
        assert_eq!(set.weight(&key(0, Sign::Plus)), Some(0.75));
        assert_eq!(set.weight(&key(1, Sign::Plus)), Some(0.25));
    }

    #[test]
    fn fw_step_with_unit_gamma_resets() {
        let mut set = set_of(&[(basis(0, Sign::Plus), 0.5), (basis(1, Sign::Plus), 0.5)]);
        set.apply_fw_step(basis(2, Sign::Minus), 1.0).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.weight(&key(2, Sign::Minus)), Some(1.0));
    }

    #[test]
    fn away_step_examples() {
        let (a, b) = (basis(0, Sign::Plus), basis(1, Sign::Plus));

        let mut set = set_of(&[(a.clone(), 0.9), (b.clone(), 0.1)]);
        set.apply_away_step(&key(1, Sign::Plus), 1.0 / 9.0).unwrap();
        assert_eq!(set.len(), 1);
        assert!((set.weight(&key(0, Sign::Plus)).unwrap() - 1.0).abs() < 1e-15);

        let mut set = set_of(&[(a.clone(), 0.5), (b.clone(), 0.5)]);
        set.apply_away_step(&key(1, Sign::Plus), 0.5).unwrap();
        assert_eq!(set.weight(&key(0, Sign::Plus)), Some(0.75));
        assert_eq!(set.weight(&key(1, Sign::Plus)), Some(0.25));

        let mut set = set_of(&[(a, 0.5), (b, 0.5)]);
        let err = set.apply_away_step(&key(1, Sign::Plus), 2.0).unwrap_err();
        assert!(matches!(err, Error::InvariantViolation(_)));
    }

    #[test]
    fn rank_one_atoms_are_never_merged() {
        let atom = Atom::RankOne {
            u: Array1::from(vec![1.0, 0.0]),
            v: Array1::from(vec![0.0, 1.0]),
            radius: 1.0,
            negated: true,
        };
        let mut set = ActiveSet::new();
        let k1 = set.apply_fw_step(atom.clone(), 1.0).unwrap();
        let k2 = set.apply_fw_step(atom, 0.5).unwrap();
        assert_ne!(k1, k2);
        assert_eq!(set.len(), 2);
        let p = set.point(Shape::Matrix(2, 2)).unwrap();
        assert_eq!(p.as_slice(), &[0.0, -1.0, 0.0, 0.0]);
    }

    #[test]
    fn away_atom_ties_go_to_lowest_key() {
        let set = set_of(&[(basis(0, Sign::Plus), 0.5), (basis(1, Sign::Plus), 0.5)]);
        let g = Gradient::Dense(Params::from_vec(vec![1.0, 1.0]));
        let (k, v) = set.away_atom(&g).unwrap().unwrap();
        assert_eq!(k, key(0, Sign::Plus));
        assert_eq!(v, 1.0);
    }

    #[test]
    fn rank_one_dot_dense_and_sparse_agree() {
        let atom = Atom::RankOne {
            u: Array1::from(vec![0.6, 0.8]),
            v: Array1::from(vec![0.0, 1.0, 0.0]),
            radius: 2.0,
            negated: true,
        };
        let sparse = crate::params::SparseMatrix::from_triplets(
            2,
            3,
            vec![(0, 1, 1.5), (1, 1, -2.0), (1, 2, 7.0)],
        )
        .unwrap();
        let dense = Gradient::Dense(sparse.to_dense());
        let a = atom.dot(&Gradient::Sparse(sparse)).unwrap();
        let b = atom.dot(&dense).unwrap();
        let c = atom
            .to_params(Shape::Matrix(2, 3))
            .unwrap()
            .dot(&dense.to_dense())
            .unwrap();
        assert!((a - b).abs() < 1e-12 && (a - c).abs() < 1e-12);
        assert!((a - (-2.0 * (0.6 * 1.5 - 0.8 * 2.0))).abs() < 1e-12);
    }

    #[derive(Debug, Clone)]
    enum Op {
        Fw {
            index: usize,
            plus: bool,
            gamma: f64,
        },
        Away {
            pick: usize,
            frac: f64,
        },
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            (0usize..5, any::<bool>(), 0.01f64..1.0).prop_map(|(index, plus, gamma)| Op::Fw {
                index,
                plus,
                gamma
            }),
            (0usize..10, 0.05f64..=1.0).prop_map(|(pick, frac)| Op::Away { pick, frac }),
        ]
    }

    proptest! {
        #[test]
        fn updates_preserve_weights_and_reconstruction(ops in proptest::collection::vec(op(), 1..60)) {
            let shape = Shape::Vector(5);
            let mut set = ActiveSet::new();
            set.apply_fw_step(basis(0, Sign::Plus), 1.0).unwrap();
            for op in ops {
                let before = set.point(shape).unwrap();
                match op {
                    Op::Fw { index, plus, gamma } => {
                        let atom = basis(index, if plus { Sign::Plus } else { Sign::Minus });
                        let target = atom.to_params(shape).unwrap();
                        set.apply_fw_step(atom, gamma).unwrap();
                        let after = set.point(shape).unwrap();
                        for i in 0..5 {
                            let expected = (1.0 - gamma) * before.as_slice()[i] + gamma * target.as_slice()[i];
                            prop_assert!((after.as_slice()[i] - expected).abs() < 1e-9);
                        }
                    }
                    Op::Away { pick, frac } => {
                        if set.len() < 2 { continue; }
                        let k = *set.iter().nth(pick % set.len()).unwrap().0;
                        let target = set.get(&k).unwrap().atom.to_params(shape).unwrap();
                        let gmax = set.gamma_max(&k).unwrap();
                        let gamma = frac * gmax;
                        set.apply_away_step(&k, gamma).unwrap();
                        let after = set.point(shape).unwrap();
                        for i in 0..5 {
                            let expected = (1.0 + gamma) * before.as_slice()[i] - gamma * target.as_slice()[i];
                            prop_assert!((after.as_slice()[i] - expected).abs() < 1e-9);
                        }
                        if frac == 1.0 {
                            prop_assert!(set.get(&k).is_none());
                        }
                    }
                }
                prop_assert!(set.check_weights(1e-9).is_ok());
            }
        }

        #[test]
        fn gamma_max_is_the_exact_boundary(w in 0.01f64..0.99) {
            let (a, b) = (basis(0, Sign::Plus), basis(1, Sign::Minus));
            let base = set_of(&[(a, 1.0 - w), (b, w)]);
            let k = key(1, Sign::Minus);
            let gmax = base.gamma_max(&k).unwrap();

            let mut over = base.clone();
            prop_assert!(over.apply_away_step(&k, gmax + 1e-6).is_err());

            let mut exact = base.clone();
            exact.apply_away_step(&k, gmax).unwrap();
            prop_assert!(exact.get(&k).is_none());
            prop_assert!(exact.check_weights(1e-9).is_ok());
        }
    }
}
