//! Dense row-major matrices and the Frobenius-norm kernels the metric path is
//! built on.
//!
//! All accumulation happens in `f64`. Sums of squares use blocked pairwise
//! summation so rounding error grows with `log(n)` rather than `n`, which
//! matters when a difference of two large, nearly equal norms is the signal.

use std::fmt;

use thiserror::Error;

/// Leaf size for pairwise summation.
pub const SUM_BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },
    #[error("data length {len} does not match shape {shape}")]
    LengthMismatch { shape: Shape, len: usize },
    #[error("matrix dimensions must be positive, got {0}")]
    EmptyShape(Shape),
    #[error("non-finite entry {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// A dense real matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        let shape = Shape { rows, cols };
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyShape(shape));
        }
        if data.len() != rows * cols {
            return Err(LinalgError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: idx / cols,
                col: idx % cols,
                value: data[idx],
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, LinalgError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for row in rows {
            if row.len() != n_cols {
                return Err(LinalgError::LengthMismatch {
                    shape: Shape {
                        rows: n_rows,
                        cols: n_cols,
                    },
                    len: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(n_rows, n_cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Builds a matrix entry by entry. Panics if `f` yields a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::from_vec(rows, cols, data).expect("from_fn produced an invalid matrix")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        Shape {
            rows: self.rows,
            cols: self.cols,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Mutable access for in-crate kernels (training loops) that keep entries finite.
    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Returns a copy with entry `(row, col)` replaced. Used for finite differences.
    pub fn with_entry(&self, row: usize, col: usize, value: f64) -> Result<Self, LinalgError> {
        if !value.is_finite() {
            return Err(LinalgError::NonFinite { row, col, value });
        }
        let mut out = self.clone();
        out.data[row * self.cols + col] = value;
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> Result<Self, LinalgError> {
        Self::from_vec(self.rows, self.cols, self.data.iter().map(|v| c * v).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<(), LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::ShapeMismatch {
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }
}

/// `sqrt(sum of squared entries)`.
pub fn frobenius_norm(w: &Matrix) -> f64 {
    pairwise_sum_sq(&w.data).sqrt()
}

/// Frobenius norm of `a - b` without materialising the difference.
pub fn frobenius_distance(a: &Matrix, b: &Matrix) -> Result<f64, LinalgError> {
    a.check_same_shape(b)?;
    Ok(pairwise_sum_sq_diff(&a.data, &b.data).sqrt())
}

pub fn sub(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    a.check_same_shape(b)?;
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect();
    Matrix::from_vec(a.rows, a.cols, data)
}

pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    scaled_axpy(a, 1.0, b)
}

/// `y + alpha * x`, elementwise.
pub fn scaled_axpy(y: &Matrix, alpha: f64, x: &Matrix) -> Result<Matrix, LinalgError> {
    y.check_same_shape(x)?;
    let data = y
        .data
        .iter()
        .zip(&x.data)
        .map(|(yv, xv)| yv + alpha * xv)
        .collect();
    Matrix::from_vec(y.rows, y.cols, data)
}

/// Sum of squares with pairwise reduction over `SUM_BLOCK`-sized leaves.
pub fn pairwise_sum_sq(values: &[f64]) -> f64 {
    if values.len() <= SUM_BLOCK {
        return values.iter().map(|v| v * v).sum();
    }
    let mid = split_point(values.len());
    pairwise_sum_sq(&values[..mid]) + pairwise_sum_sq(&values[mid..])
}

fn pairwise_sum_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= SUM_BLOCK {
        return a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let d = x - y;
                d * d
            })
            .sum();
    }
    let mid = split_point(a.len());
    pairwise_sum_sq_diff(&a[..mid], &b[..mid]) + pairwise_sum_sq_diff(&a[mid..], &b[mid..])
}

// Leaves stay block-aligned so the reduction tree only depends on the length.
fn split_point(len: usize) -> usize {
    let blocks = len.div_ceil(SUM_BLOCK);
    (blocks / 2) * SUM_BLOCK
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn norm_examples() {
        assert_eq!(frobenius_norm(&m(&[vec![3.0, 4.0], vec![0.0, 0.0]])), 5.0);
        assert!((frobenius_norm(&Matrix::identity(2)) - std::f64::consts::SQRT_2).abs() < 1e-8);
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn sub_examples() {
        let a = m(&[vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert!(sub(&a, &a).unwrap().is_zero());

        let a = m(&[vec![3.0, 4.0], vec![0.0, 0.0]]);
        let b = m(&[vec![0.0, 3.0], vec![4.0, 0.0]]);
        assert_eq!(
            sub(&a, &b).unwrap(),
            m(&[vec![3.0, 1.0], vec![-4.0, 0.0]])
        );

        assert_eq!(
            sub(&m(&[vec![5.0]]), &m(&[vec![2.0]])).unwrap(),
            m(&[vec![3.0]])
        );
    }

    #[test]
    fn sub_shape_mismatch_names_both_shapes() {
        let err = sub(&Matrix::zeros(2, 3), &Matrix::zeros(3, 2)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("3x2"), "{msg}");
    }

    #[test]
    fn axpy_examples() {
        let r = scaled_axpy(&m(&[vec![1.0, 1.0]]), 0.0, &m(&[vec![9.0, 9.0]])).unwrap();
        assert_eq!(r, m(&[vec![1.0, 1.0]]));
        let r = scaled_axpy(&m(&[vec![1.0, 0.0]]), -1.0, &m(&[vec![1.0, 0.0]])).unwrap();
        assert_eq!(r, m(&[vec![0.0, 0.0]]));
        let r = scaled_axpy(&m(&[vec![2.0]]), 0.5, &m(&[vec![4.0]])).unwrap();
        assert_eq!(r, m(&[vec![4.0]]));
        assert!(scaled_axpy(&Matrix::zeros(1, 2), 1.0, &Matrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn constructors_reject_non_finite() {
        let err = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, LinalgError::NonFinite { row: 0, col: 1, .. }));
        assert!(Matrix::from_vec(1, 1, vec![f64::INFINITY]).is_err());
        assert!(Matrix::from_vec(2, 2, vec![1.0; 3]).is_err());
        assert!(Matrix::from_vec(0, 2, vec![]).is_err());
    }

    #[test]
    fn pairwise_matches_naive_on_exact_values() {
        // Integers squared stay exact in f64 at this size.
        let values: Vec<f64> = (0..20_000).map(|i| (i % 7) as f64).collect();
        let naive: f64 = values.iter().map(|v| v * v).sum();
        assert_eq!(pairwise_sum_sq(&values), naive);
    }

    #[test]
    fn pairwise_is_more_accurate_than_naive() {
        let values = vec![0.1f64; 1 << 20];
        let exact = 0.01 * (1u64 << 20) as f64;
        let naive: f64 = values.iter().map(|v| v * v).sum();
        let pairwise = pairwise_sum_sq(&values);
        assert!((pairwise - exact).abs() <= (naive - exact).abs());
    }

    fn matrix_strategy() -> impl Strategy<Value = Matrix> {
        (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            prop::collection::vec(-100.0f64..100.0, r * c)
                .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
        })
    }

    fn matrix_pair() -> impl Strategy<Value = (Matrix, Matrix)> {
        (1usize..12, 1usize..12).prop_flat_map(|(r, c)| {
            (
                prop::collection::vec(-100.0f64..100.0, r * c),
                prop::collection::vec(-100.0f64..100.0, r * c),
            )
                .prop_map(move |(a, b)| {
                    (
                        Matrix::from_vec(r, c, a).unwrap(),
                        Matrix::from_vec(r, c, b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn homogeneity(w in matrix_strategy(), c in -1e3f64..1e3) {
            let lhs = frobenius_norm(&w.scale(c).unwrap());
            let rhs = c.abs() * frobenius_norm(&w);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn triangle((a, b) in matrix_pair()) {
            let na = frobenius_norm(&a);
            let nb = frobenius_norm(&b);
            let nab = frobenius_norm(&add(&a, &b).unwrap());
            prop_assert!(nab <= na + nb + 1e-12 * (na + nb));
        }

        #[test]
        fn reverse_triangle((a, b) in matrix_pair()) {
            let gap = (frobenius_norm(&a) - frobenius_norm(&b)).abs();
            let dist = frobenius_distance(&a, &b).unwrap();
            prop_assert!(gap <= dist + 1e-12 * (1.0 + dist));
            prop_assert_eq!(dist, frobenius_norm(&sub(&a, &b).unwrap()));
        }
    }
}
