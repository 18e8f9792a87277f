//! Small dense row-major matrices representing elements of L(R^m, R^d).
//!
//! Norms on L(R^m, R^d) are operator norms induced by the Euclidean norms on
//! both sides. For a single row or column that is the Euclidean norm of the
//! entries; otherwise it is the largest singular value.

use nalgebra::DMatrix;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Self::from_row_major(1, 1, vec![v])
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn op_norm(&self) -> f64 {
        op_norm(self.rows, self.cols, &self.data)
    }

    /// `out = self * x`.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        mat_vec(self.rows, self.cols, &self.data, x, out);
    }
}

/// Operator norm of a row-major `rows x cols` matrix.
pub fn op_norm(rows: usize, cols: usize, data: &[f64]) -> f64 {
    debug_assert_eq!(data.len(), rows * cols);
    if rows == 1 || cols == 1 {
        return euclid(data);
    }
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values().max()
}

/// Operator norm of `a - b`, both row-major with the same shape.
pub fn op_norm_diff(rows: usize, cols: usize, a: &[f64], b: &[f64]) -> f64 {
    if rows == 1 || cols == 1 {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            let d = x - y;
            s += d * d;
        }
        return s.sqrt();
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    op_norm(rows, cols, &diff)
}

pub fn euclid(v: &[f64]) -> f64 {
    if v.len() == 1 {
        return v[0].abs();
    }
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn euclid_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() == 1 {
        return (a[0] - b[0]).abs();
    }
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        s += d * d;
    }
    s.sqrt()
}

/// `out = A x` for row-major `A`.
pub fn mat_vec(rows: usize, cols: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        out[i] = row.iter().zip(x).map(|(p, q)| p * q).sum();
    }
}

/// `out += A x` for row-major `A`.
pub fn mat_vec_add(rows: usize, cols: usize, a: &[f64], x: &[f64], out: &mut [f64]) {
    for i in 0..rows {
        let row = &a[i * cols..(i + 1) * cols];
        let s: f64 = row.iter().zip(x).map(|(p, q)| p * q).sum();
        out[i] += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_norm_is_euclidean() {
        let m = Matrix::from_row_major(2, 1, vec![3.0, 4.0]);
        assert_eq!(m.op_norm(), 5.0);
        let m = Matrix::from_row_major(1, 2, vec![3.0, -4.0]);
        assert_eq!(m.op_norm(), 5.0);
    }

    #[test]
    fn square_norm_is_largest_singular_value() {
        let m = Matrix::from_row_major(2, 2, vec![2.0, 0.0, 0.0, -3.0]);
        assert!((m.op_norm() - 3.0).abs() < 1e-12);
        // rank one: u v^T with |u| = |v| = sqrt(2) has norm 2
        let m = Matrix::from_row_major(2, 2, vec![1.0, 1.0, 1.0, 1.0]);
        assert!((m.op_norm() - 2.0).abs() < 1e-12);
        assert!((Matrix::identity(3).op_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mat_vec_product() {
        let m = Matrix::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut out = [0.0; 2];
        m.apply(&[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-2.0, -2.0]);
    }
}
