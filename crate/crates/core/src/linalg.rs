//! Small dense/sparse linear-algebra kernels: matrix-free operators and a
//! one-sided Jacobi SVD used for nuclear norms and as a dense reference.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::params::SparseMatrix;

/// A real `rows × cols` matrix accessed only through products.
pub trait LinearOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `M x`.
    fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64>;
    /// `Mᵀ y`.
    fn apply_transpose(&self, y: ArrayView1<'_, f64>) -> Array1<f64>;
    fn frobenius_norm(&self) -> f64;
    /// Number of explicitly stored entries.
    fn stored_entries(&self) -> usize {
        self.rows() * self.cols()
    }
    fn to_dense_matrix(&self) -> Array2<f64>;
}

impl LinearOperator for ArrayView2<'_, f64> {
    fn rows(&self) -> usize {
        self.nrows()
    }

    fn cols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.dot(&x)
    }

    fn apply_transpose(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        self.t().dot(&y)
    }

    fn frobenius_norm(&self) -> f64 {
        self.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn to_dense_matrix(&self) -> Array2<f64> {
        self.to_owned()
    }
}

impl LinearOperator for SparseMatrix {
    fn rows(&self) -> usize {
        self.dims().0
    }

    fn cols(&self) -> usize {
        self.dims().1
    }

    fn apply(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.rows());
        for &(r, c, v) in self.entries() {
            out[r] += v * x[c];
        }
        out
    }

    fn apply_transpose(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut out = Array1::zeros(self.cols());
        for &(r, c, v) in self.entries() {
            out[c] += v * y[r];
        }
        out
    }

    fn frobenius_norm(&self) -> f64 {
        SparseMatrix::frobenius_norm(self)
    }

    fn stored_entries(&self) -> usize {
        self.nnz()
    }

    fn to_dense_matrix(&self) -> Array2<f64> {
        let mut out = Array2::zeros(self.dims());
        for &(r, c, v) in self.entries() {
            out[[r, c]] = v;
        }
        out
    }
}

pub fn norm2(x: ArrayView1<'_, f64>) -> f64 {
    x.dot(&x).sqrt()
}

/// Singular values in decreasing order (one-sided Jacobi).
pub fn singular_values(a: ArrayView2<'_, f64>) -> Vec<f64> {
    let mut w: Array2<f64> = if a.nrows() >= a.ncols() {
        a.to_owned()
    } else {
        a.t().to_owned()
    };
    let n = w.ncols();
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = w.column(p);
                    let cq = w.column(q);
                    (cp.dot(&cp), cq.dot(&cq), cp.dot(&cq))
                };
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mut row in w.axis_iter_mut(Axis(0)) {
                    let (xp, xq) = (row[p], row[q]);
                    row[p] = c * xp - s * xq;
                    row[q] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = w.columns().into_iter().map(|c| norm2(c)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

pub fn nuclear_norm(a: ArrayView2<'_, f64>) -> f64 {
    singular_values(a).iter().sum()
}

pub fn spectral_norm(a: ArrayView2<'_, f64>) -> f64 {
    singular_values(a).first().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn jacobi_on_diagonal_and_rank_one() {
        let d = array![[2.0, 0.0], [0.0, -3.0], [0.0, 0.0]];
        let sv = singular_values(d.view());
        assert!((sv[0] - 3.0).abs() < 1e-14 && (sv[1] - 2.0).abs() < 1e-14);

        let r1 = array![[1.0, 2.0, 2.0], [2.0, 4.0, 4.0]];
        let sv = singular_values(r1.view());
        assert!((sv[0] - 3.0 * 5f64.sqrt()).abs() < 1e-12, "{sv:?}");
        assert!(sv[1].abs() < 1e-12);
    }

    #[test]
    fn sparse_operator_matches_dense() {
        let s = SparseMatrix::from_triplets(2, 3, vec![(0, 0, 1.0), (1, 2, -2.0), (0, 2, 0.5)])
            .unwrap();
        let d = s.to_dense();
        let dm = d.as_matrix().unwrap();
        let x = array![1.0, 2.0, 3.0];
        let y = array![-1.0, 4.0];
        assert_eq!(s.apply(x.view()), dm.apply(x.view()));
        assert_eq!(s.apply_transpose(y.view()), dm.apply_transpose(y.view()));
    }
}
