//! Singular values and top singular pairs against nalgebra's SVD.

use nalgebra::DMatrix;
use ndarray::Array2;
use ofw_core::linalg::{nuclear_norm, singular_values, spectral_norm};
use ofw_core::lmo::top_singular_pair;
use ofw_core::{PowerIterConfig, SparseMatrix};
use proptest::prelude::*;

fn nalgebra_sv(a: &Array2<f64>) -> Vec<f64> {
    let (r, c) = a.dim();
    let m = DMatrix::from_row_slice(r, c, a.as_slice().unwrap());
    let mut s: Vec<f64> = m.singular_values().iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn matrix() -> impl Strategy<Value = Array2<f64>> {
    (1usize..10, 1usize..10).prop_flat_map(|(r, c)| {
        proptest::collection::vec(-3.0f64..3.0, r * c)
            .prop_map(move |v| Array2::from_shape_vec((r, c), v).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jacobi_svd_matches_nalgebra(a in matrix()) {
        let ours = singular_values(a.view());
        let theirs = nalgebra_sv(&a);
        prop_assert_eq!(ours.len(), theirs.len());
        let scale = theirs[0].max(1.0);
        for (x, y) in ours.iter().zip(&theirs) {
            prop_assert!((x - y).abs() <= 1e-10 * scale, "{:?} vs {:?}", ours, theirs);
        }
        prop_assert!((nuclear_norm(a.view()) - theirs.iter().sum::<f64>()).abs() <= 1e-9 * scale);
        prop_assert!((spectral_norm(a.view()) - theirs[0]).abs() <= 1e-10 * scale);
    }

    #[test]
    fn power_iteration_reaches_top_singular_value(a in matrix()) {
        let cfg = PowerIterConfig { max_iter: 50_000, ..PowerIterConfig::default() };
        let top = top_singular_pair(&a.view(), &cfg);
        let sigma = nalgebra_sv(&a)[0];
        prop_assert!(top.converged);
        prop_assert!((top.sigma - sigma).abs() <= 1e-6 * sigma.max(1.0), "{} vs {}", top.sigma, sigma);
        // The reported pair satisfies the residual it claims.
        let mv = a.dot(&top.v);
        let r = (&mv - &(&top.u * top.sigma)).mapv(|x| x * x).sum().sqrt();
        prop_assert!(r <= top.residual + 1e-12);
    }
}

#[test]
fn sparse_operator_agrees_with_dense() {
    let triplets = vec![
        (0, 0, 2.0),
        (1, 3, -1.5),
        (2, 1, 0.5),
        (4, 4, 3.0),
        (3, 0, 1.0),
        (0, 2, -0.25),
    ];
    let sparse = SparseMatrix::from_triplets(5, 6, triplets).unwrap();
    let dense = sparse.to_dense();
    let dense = dense.as_matrix().unwrap().to_owned();
    let cfg = PowerIterConfig {
        max_iter: 50_000,
        ..PowerIterConfig::default()
    };
    let a = top_singular_pair(&sparse, &cfg);
    let b = top_singular_pair(&dense.view(), &cfg);
    let sigma = nalgebra_sv(&dense)[0];
    assert!((a.sigma - sigma).abs() < 1e-8 && (b.sigma - sigma).abs() < 1e-8);
}

#[test]
fn zero_matrix_has_zero_top_value() {
    let z = Array2::<f64>::zeros((3, 4));
    let top = top_singular_pair(&z.view(), &PowerIterConfig::default());
    assert_eq!(top.sigma, 0.0);
    assert!((top.u.dot(&top.u) - 1.0).abs() < 1e-12 && (top.v.dot(&top.v) - 1.0).abs() < 1e-12);
}
