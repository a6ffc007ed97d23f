//! Solver invariants checked against shadow bookkeeping kept in the test.

use ndarray::Array1;
use ofw_core::atoms::{ActiveSet, Atom, AtomKey};
use ofw_core::exec::Execution;
use ofw_core::gradients::{ClassificationLoss, Features, LabeledVector, ReplayStats};
use ofw_core::metrics::Cadence;
use ofw_core::solvers::{self, RunOptions};
use ofw_core::workloads::{
    gen_classification, gen_fixed_design_lasso, ClassificationSpec, ClassifierConstraint,
};
use ofw_core::{
    ConstraintSet, Gradient, OawState, OfwState, Params, SolverKind, StepKind, StepSchedule,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn polytope_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    (1usize..5, 2usize..8).prop_flat_map(|(dim, k)| {
        let vertices = proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, dim), k);
        let grads = proptest::collection::vec(proptest::collection::vec(-1.0f64..1.0, dim), 60);
        (vertices, grads)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Drop steps never outnumber non-drop steps, and θ is always the
    /// convex combination recorded in the active set.
    #[test]
    fn oaw_keeps_half_of_its_steps_and_a_valid_combination((vertices, grads) in polytope_case()) {
        let c = ConstraintSet::polytope(vertices.clone()).unwrap();
        let mut s = OawState::new(&c, StepSchedule::ANYTIME).unwrap();
        for (i, g) in grads.into_iter().enumerate() {
            let t = i + 1;
            let before = s.non_drop_steps();
            let rec = s.step(&Gradient::Dense(Params::from_vec(g)), &c).unwrap();
            prop_assert_eq!(rec.t, t);
            prop_assert!(rec.n_t >= t.div_ceil(2), "n_t={} at t={}", rec.n_t, t);
            match rec.kind {
                StepKind::Drop => {
                    prop_assert_eq!(rec.n_t, before);
                    prop_assert!(s.active().get(&rec.away_atom.unwrap()).is_none());
                }
                _ => prop_assert_eq!(rec.n_t, before + 1),
            }
            let mut point = vec![0.0; vertices[0].len()];
            let mut sum = 0.0;
            for (key, e) in s.active().iter() {
                let AtomKey::Vertex(id) = key else { panic!("non-vertex atom") };
                prop_assert!(e.weight > 0.0);
                sum += e.weight;
                for (p, v) in point.iter_mut().zip(&vertices[*id]) {
                    *p += e.weight * v;
                }
            }
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            for (p, q) in point.iter().zip(s.theta().as_slice()) {
                prop_assert!((p - q).abs() <= 1e-9);
            }
        }
    }

    /// O-FW iterates stay reconstructible from the atoms it has visited.
    #[test]
    fn ofw_iterates_match_a_shadow_active_set(
        dim in 1usize..8,
        radius in 0.1f64..4.0,
        seed in any::<u64>(),
        alpha in 0.5f64..0.99,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = ConstraintSet::l1_ball(radius, dim).unwrap();
        let schedule = StepSchedule::Power { alpha };
        let mut s = OfwState::new(c.shape(), schedule).unwrap();
        let mut shadow = ActiveSet::new();
        for t in 1..=50 {
            let g: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let rec = s.step(&Gradient::Dense(Params::from_vec(g)), &c).unwrap();
            let Some(AtomKey::SignedBasis { index, sign }) = rec.fw_atom else { panic!("missing atom") };
            prop_assert_eq!(rec.gamma_hat, schedule.step_size(t).unwrap());
            shadow.apply_fw_step(Atom::SignedBasis { index, sign, radius }, rec.gamma_hat).unwrap();
            let p = shadow.point(c.shape()).unwrap();
            prop_assert!(p.max_abs_diff(s.theta()).unwrap() <= 1e-9);
            prop_assert!(s.theta().l1_norm() <= radius * (1.0 + 1e-12));
        }
    }
}

#[test]
fn runs_are_deterministic_given_the_seed() {
    let w = gen_fixed_design_lasso(20, 8, 0.2, 1.0, 0.5, 9)
        .unwrap()
        .with_reference(20_000)
        .unwrap();
    let trace = |kind| {
        let mut opts = RunOptions::new(kind, StepSchedule::ANYTIME, 300);
        opts.cadence = Cadence::Every;
        let mut oracle = w.oracle();
        let mut t = solvers::run(&opts, &mut oracle, &w.constraint, w.stream(), Some(&w)).unwrap();
        t.records.iter_mut().for_each(|r| r.elapsed_ns = 0);
        t.wall_clock_ns = 0;
        t
    };
    for kind in [SolverKind::Ofw, SolverKind::Oaw] {
        let (a, b) = (trace(kind), trace(kind));
        assert_eq!(a, b);
        assert_eq!(a.records.len(), 300);
        assert_eq!(a.evaluations.len(), 300);
        assert_eq!(a.drop_lemma_violations, 0);
    }
}

#[test]
fn batches_and_inner_repeats_shape_the_trace() {
    let w = gen_fixed_design_lasso(10, 5, 0.2, 1.0, 1.2, 2).unwrap();
    let mut opts = RunOptions::new(SolverKind::Ofw, StepSchedule::ANYTIME, 16);
    opts.batch = 3;
    opts.inner_repeats = 4;
    let mut oracle = w.oracle();
    let t = solvers::run(&opts, &mut oracle, &w.constraint, w.stream(), Some(&w)).unwrap();
    assert_eq!(t.records.len(), 64);
    assert_eq!(oracle.count(), 48);
    // Geometric cadence: rounds 1, 2, 4, 8, 16, each on the round's first step.
    let steps: Vec<usize> = t.evaluations.iter().map(|e| e.step).collect();
    assert_eq!(steps, vec![1, 5, 13, 29, 61]);
}

#[test]
fn finite_stream_sets_the_truncation_flag() {
    let spec = ClassificationSpec {
        m1: 3,
        m2: 3,
        rank: 1,
        n_train: 25,
        flip_frac: 0.1,
        loss: ClassificationLoss::default(),
        constraint: ClassifierConstraint::L1 { radius: 1.0 },
        seed: 4,
    };
    let w = gen_classification(&spec).unwrap();
    let mut opts = RunOptions::new(SolverKind::Oaw, StepSchedule::Power { alpha: 0.75 }, 10);
    opts.batch = 3;
    let mut oracle = w.oracle();
    let t = solvers::run(&opts, &mut oracle, &w.constraint, w.stream(), None).unwrap();
    assert!(t.truncated);
    // 8 full batches, then a partial one of a single sample that is still played.
    assert_eq!(t.rounds_completed, 9);
    assert_eq!(oracle.count(), 25);
}

#[test]
fn replay_gradient_is_identical_under_both_strategies() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dim = 40;
    for dense in [true, false] {
        let mut stats = ReplayStats::new(dim, ClassificationLoss::Logistic);
        for _ in 0..2_000 {
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = if dense {
                Features::Dense(Array1::from(x))
            } else {
                Features::Sparse {
                    dim,
                    indices: (0..dim).collect(),
                    values: x,
                }
            };
            stats
                .push(LabeledVector {
                    x,
                    y: if rng.random_bool(0.5) { 1.0 } else { -1.0 },
                })
                .unwrap();
        }
        let theta = Params::from_vec((0..dim).map(|_| rng.random_range(-0.1..0.1)).collect());
        let a = stats.gradient_with(&theta, Execution::Sequential).unwrap();
        let b = stats.gradient_with(&theta, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }
}
