//! Workload optima and objectives checked against direct computation.

use ofw_core::gradients::LinkFunction;
use ofw_core::metrics::primal_gap;
use ofw_core::workloads::{
    gen_fixed_design_lasso, gen_mc, gen_random_design_lasso, reference_solve, FStar,
};
use ofw_core::{Params, Shape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_feasible_l1(rng: &mut ChaCha8Rng, dim: usize, radius: f64) -> Params {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    let scale = radius * rng.random_range(0.0..1.0) / l1;
    Params::from_vec(v.into_iter().map(|x| x * scale).collect())
}

#[test]
fn interior_lasso_optimum_has_zero_gap() {
    let w = gen_fixed_design_lasso(100, 40, 0.1, 10.0, 1.1, 1).unwrap();
    let star = w.theta_star.clone().unwrap();
    let (h, clamped) = primal_gap(w.objective(&star).unwrap(), w.f_star.unwrap().value());
    assert!(h.abs() <= 1e-12 && !clamped);
    assert_eq!(star, w.theta_bar());
}

#[test]
fn boundary_reference_brackets_random_feasible_points() {
    let w = gen_fixed_design_lasso(30, 12, 0.2, 1.0, 0.3, 3).unwrap();
    assert!(w.f_star.is_none());
    let FStar::Reference { value, certificate } = reference_solve(&w, 200_000).unwrap() else {
        panic!()
    };
    assert!(certificate <= 1e-5 * value);
    let ofw_core::ConstraintSet::L1Ball { radius, .. } = w.constraint else {
        panic!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..500 {
        let p = random_feasible_l1(&mut rng, 30, radius);
        assert!(w.objective(&p).unwrap() >= value - certificate);
    }
}

#[test]
fn random_design_objective_is_the_sample_average() {
    let w = gen_random_design_lasso(6, 4, 0.5, 0.5, 1.0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let theta = random_feasible_l1(&mut rng, 6, 1.0);
    let n = 40_000;
    let mut total = 0.0;
    for s in w.stream().take(n) {
        let ofw_core::Sample::Lasso(s) = s else {
            panic!()
        };
        let r = s.design.dot(theta.data()) - &s.response;
        total += 0.5 * r.dot(&r);
    }
    let f = w.objective(&theta).unwrap();
    assert!(
        (total / n as f64 - f).abs() < 0.02 * f,
        "{} vs {f}",
        total / n as f64
    );
}

#[test]
fn mc_gradient_matches_finite_differences() {
    for link in [
        LinkFunction::Gaussian,
        LinkFunction::Logistic,
        LinkFunction::Poisson,
    ] {
        let w = gen_mc(4, 5, 2, 1.0, 1.1, link, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let theta = Params::with_shape(
            Shape::Matrix(4, 5),
            (0..20).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let g = w.gradient(&theta).unwrap();
        let h = 1e-6;
        for i in 0..20 {
            let mut plus = theta.clone();
            let mut minus = theta.clone();
            plus.data_mut()[i] += h;
            minus.data_mut()[i] -= h;
            let fd = (w.objective(&plus).unwrap() - w.objective(&minus).unwrap()) / (2.0 * h);
            assert!(
                (fd - g.data()[i]).abs() < 1e-6,
                "{link:?} entry {i}: {fd} vs {}",
                g.data()[i]
            );
        }
        // θ̄ is optimal and inside the ball.
        assert!(w.gradient(&w.theta_bar()).unwrap().max_abs() < 1e-15);
    }
}

#[test]
fn streams_depend_only_on_the_seed() {
    let a = gen_mc(5, 5, 1, 1.0, 1.1, LinkFunction::Gaussian, 3).unwrap();
    let b = gen_mc(5, 5, 1, 1.0, 1.1, LinkFunction::Gaussian, 3).unwrap();
    let c = gen_mc(5, 5, 1, 1.0, 1.1, LinkFunction::Gaussian, 4).unwrap();
    let first = |w: &ofw_core::Workload| w.stream().take(50).collect::<Vec<_>>();
    assert_eq!(first(&a), first(&b));
    assert_ne!(first(&a), first(&c));
}
