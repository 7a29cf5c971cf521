//! Small dense square-matrix helpers. Matrices are row-major `n x n` slices.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

pub fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Gauss-Jordan elimination with partial pivoting.
pub fn invert(matrix: &[f64], n: usize) -> Result<Vec<f64>> {
    assert_eq!(matrix.len(), n * n, "matrix is not {n}x{n}");
    let mut a = matrix.to_vec();
    let mut inv = identity(n);
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let threshold = scale * f64::EPSILON * n as f64;

    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .expect("non-empty range");
        let pivot = a[pivot_row * n + col];
        if !(pivot.abs() > threshold) {
            return Err(Error::SingularMatrix { column: col, pivot });
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
                inv.swap(col * n + j, pivot_row * n + j);
            }
        }
        let p = a[col * n + col];
        for j in 0..n {
            a[col * n + j] /= p;
            inv[col * n + j] /= p;
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row * n + col];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a[row * n + j] -= factor * a[col * n + j];
                inv[row * n + j] -= factor * inv[col * n + j];
            }
        }
    }
    Ok(inv)
}

/// Smallest singular value, from an SVD.
pub fn min_singular_value(matrix: &[f64], n: usize) -> f64 {
    let m = DMatrix::from_row_slice(n, n, matrix);
    m.singular_values().min()
}

/// Induced 1-norm: the largest absolute column sum.
pub fn max_column_abs_sum(matrix: &[f64], n: usize) -> f64 {
    (0..n)
        .map(|j| (0..n).map(|i| matrix[i * n + j].abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest entry of `|a b - I|`.
pub fn identity_residual(a: &[f64], b: &[f64], n: usize) -> f64 {
    let prod = mat_mul(a, b, n);
    let eye = identity(n);
    prod.iter().zip(&eye).map(|(x, e)| (x - e).abs()).fold(0.0, f64::max)
}
