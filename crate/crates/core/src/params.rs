//! Iterates and gradients.
//!
//! Both vectors and matrices are stored flat (matrices row-major) so that the
//! vector oracles and the convex-combination updates never care about the shape.

use ndarray::{Array1, ArrayView2, ArrayViewMut2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Vector(n) => n,
            Shape::Matrix(m1, m2) => m1 * m2,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn matrix_dims(&self) -> Option<(usize, usize)> {
        match *self {
            Shape::Vector(_) => None,
            Shape::Matrix(m1, m2) => Some((m1, m2)),
        }
    }
}

/// An iterate θ, a dense vector or a dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    shape: Shape,
    data: Array1<f64>,
}

impl Params {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            data: Array1::zeros(shape.len()),
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: Shape::Vector(data.len()),
            data: Array1::from(data),
        }
    }

    pub fn from_array(data: Array1<f64>) -> Self {
        Self {
            shape: Shape::Vector(data.len()),
            data,
        }
    }

    /// Reinterprets flat row-major data with the given shape.
    pub fn with_shape(shape: Shape, data: Array1<f64>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(shape, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn from_matrix(m: ArrayView2<'_, f64>) -> Self {
        let (m1, m2) = m.dim();
        let data: Array1<f64> = m.iter().copied().collect();
        Self {
            shape: Shape::Matrix(m1, m2),
            data,
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &Array1<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array1<f64> {
        &mut self.data
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("params are contiguous")
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.data
    }

    /// Matrix view; `None` for vector-shaped parameters.
    pub fn as_matrix(&self) -> Option<ArrayView2<'_, f64>> {
        let (m1, m2) = self.shape.matrix_dims()?;
        Some(ArrayView2::from_shape((m1, m2), self.as_slice()).expect("matrix dims match storage"))
    }

    pub fn as_matrix_mut(&mut self) -> Option<ArrayViewMut2<'_, f64>> {
        let (m1, m2) = self.shape.matrix_dims()?;
        let slice = self.data.as_slice_mut().expect("params are contiguous");
        Some(ArrayViewMut2::from_shape((m1, m2), slice).expect("matrix dims match storage"))
    }

    pub fn dot(&self, other: &Params) -> Result<f64> {
        self.ensure_shape(other.shape)?;
        Ok(self.data.dot(&other.data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Params) -> Result<f64> {
        self.ensure_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn ensure_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(Error::shape(self.shape, shape));
        }
        Ok(())
    }
}

/// Sparse matrix in coordinate form, entries sorted by `(row, col)` and unique.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    /// Builds from arbitrary triplets; duplicates are summed.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::IndexOutOfRange(format!(
                "({r}, {c}) in {rows}x{cols}"
            )));
        }
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len());
        for (r, c, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => entries.push((r, c, v)),
            }
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    /// Caller guarantees sorted, unique, in-range entries.
    pub(crate) fn from_sorted_unchecked(
        rows: usize,
        cols: usize,
        entries: Vec<(usize, usize, f64)>,
    ) -> Self {
        debug_assert!(entries
            .windows(2)
            .all(|w| (w[0].0, w[0].1) < (w[1].0, w[1].1)));
        Self {
            rows,
            cols,
            entries,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> Params {
        let mut out = Params::zeros(Shape::Matrix(self.rows, self.cols));
        let data = out.data_mut();
        for &(r, c, v) in &self.entries {
            data[r * self.cols + c] += v;
        }
        out
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|e| e.2 * e.2).sum::<f64>().sqrt()
    }
}

/// A surrogate gradient ∇F_t(θ): dense, or sparse for matrix-completion oracles.
#[derive(Debug, Clone, PartialEq)]
pub enum Gradient {
    Dense(Params),
    Sparse(SparseMatrix),
}

impl Gradient {
    pub fn shape(&self) -> Shape {
        match self {
            Gradient::Dense(p) => p.shape(),
            Gradient::Sparse(s) => Shape::Matrix(s.rows, s.cols),
        }
    }

    /// ⟨G, θ⟩ without densifying sparse gradients.
    pub fn dot(&self, theta: &Params) -> Result<f64> {
        match self {
            Gradient::Dense(g) => g.dot(theta),
            Gradient::Sparse(s) => {
                theta.ensure_shape(self.shape())?;
                let data = theta.as_slice();
                Ok(s.entries
                    .iter()
                    .map(|&(r, c, v)| v * data[r * s.cols + c])
                    .sum())
            }
        }
    }

    pub fn to_dense(&self) -> Params {
        match self {
            Gradient::Dense(g) => g.clone(),
            Gradient::Sparse(s) => s.to_dense(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Gradient::Dense(g) => g.is_finite(),
            Gradient::Sparse(s) => s.entries.iter().all(|e| e.2.is_finite()),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            Gradient::Dense(g) => g.max_abs(),
            Gradient::Sparse(s) => s.entries.iter().fold(0.0, |m, e| m.max(e.2.abs())),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        match self {
            Gradient::Dense(g) => g.data().dot(g.data()).sqrt(),
            Gradient::Sparse(s) => s.frobenius_norm(),
        }
    }
}

impl From<Params> for Gradient {
    fn from(p: Params) -> Self {
        Gradient::Dense(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn matrix_view_is_row_major() {
        let p = Params::from_matrix(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]].view());
        assert_eq!(p.shape(), Shape::Matrix(2, 3));
        assert_eq!(p.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(p.as_matrix().unwrap()[[1, 0]], 4.0);
    }

    #[test]
    fn sparse_triplets_merge_duplicates() {
        let s =
            SparseMatrix::from_triplets(2, 2, vec![(1, 1, 1.0), (0, 1, 2.0), (1, 1, 0.5)]).unwrap();
        assert_eq!(s.entries(), &[(0, 1, 2.0), (1, 1, 1.5)]);
        assert!(SparseMatrix::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn sparse_dot_matches_dense() {
        let s = SparseMatrix::from_triplets(2, 3, vec![(0, 2, -1.0), (1, 0, 3.0)]).unwrap();
        let theta = Params::from_matrix(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]].view());
        let sparse = Gradient::Sparse(s.clone()).dot(&theta).unwrap();
        let dense = s.to_dense().dot(&theta).unwrap();
        assert_eq!(sparse, dense);
        assert_eq!(sparse, 9.0);
    }

    #[test]
    fn dot_rejects_shape_mismatch() {
        let a = Params::zeros(Shape::Vector(4));
        let b = Params::zeros(Shape::Matrix(2, 2));
        assert!(matches!(a.dot(&b), Err(Error::ShapeMismatch { .. })));
    }
}
