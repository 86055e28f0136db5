//! Dense f64 tensors in row-major order.
//!
//! Rank 0 (scalar), 1 (vector) and 2 (matrix) cover everything the models
//! need. Values are immutable once wrapped in an `Arc` by the graph; plain
//! `Tensor`s are freely mutable buffers.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeLen {
                shape,
                len: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Scalar value; errors when the tensor holds more than one element.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::NonScalar {
                op: "item",
                shape: self.shape.clone(),
            })
        }
    }

    /// Rows of a matrix, or 1 for a vector treated as a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            _ => 1,
        }
    }

    /// Trailing dimension (columns for a matrix, length for a vector).
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Row-major matrix product `c += a * b` with `a: [m,k]`, `b: [k,n]`.
///
/// Delegates to a blocked GEMM kernel; this is the hot loop of every
/// forward and backward pass.
pub fn gemm_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += a^T * b` with `a: [m,k]`, `b: [m,n]`, `c: [k,n]`.
pub fn gemm_at_b_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += a * b^T` with `a: [m,k]`, `b: [n,k]`, `c: [m,n]`.
pub fn gemm_a_bt_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_length() {
        let err = Tensor::new(vec![2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, Error::ShapeLen { .. }));
    }

    #[test]
    fn gemm_matches_naive() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_acc(2, 3, 2, &a, &b, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn gemm_transposed_variants_match_naive() {
        // a: [2,3], b: [2,4] -> a^T b: [3,4]
        let a = [1.0, -2.0, 0.5, 3.0, 1.0, -1.0];
        let b = [2.0, 0.0, 1.0, -1.0, 4.0, 0.5, -2.0, 3.0];
        let mut c = vec![0.0; 12];
        gemm_at_b_acc(2, 3, 4, &a, &b, &mut c);
        let mut naive = vec![0.0; 12];
        for i in 0..2 {
            for kk in 0..3 {
                for j in 0..4 {
                    naive[kk * 4 + j] += a[i * 3 + kk] * b[i * 4 + j];
                }
            }
        }
        assert_eq!(c, naive);

        // a: [2,3], b: [4,3] -> a b^T: [2,4]
        let b2 = [1.0, 0.0, 2.0, -1.0, 1.0, 0.5, 3.0, -2.0, 1.0, 0.0, 1.0, 1.0];
        let mut c2 = vec![0.0; 8];
        gemm_a_bt_acc(2, 3, 4, &a, &b2, &mut c2);
        let mut naive2 = vec![0.0; 8];
        for i in 0..2 {
            for j in 0..4 {
                for kk in 0..3 {
                    naive2[i * 4 + j] += a[i * 3 + kk] * b2[j * 3 + kk];
                }
            }
        }
        assert_eq!(c2, naive2);
    }
}
