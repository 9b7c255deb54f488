//! Small dense helpers over row-major `Vec<f64>` storage.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub(crate) fn to_matrix(n: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, data)
}

pub(crate) fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * m.ncols());
    for i in 0..n {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub(crate) fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
    out
}

/// `y = A x` for a row-major square `A`.
pub(crate) fn mat_vec(n: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|i| (0..n).map(|j| a[i * n + j] * x[j]).sum())
        .collect()
}

/// `y = Aᵀ x` for a row-major square `A`.
pub(crate) fn mat_t_vec(n: usize, a: &[f64], x: &[f64]) -> Vec<f64> {
    (0..n)
        .map(|j| (0..n).map(|i| a[i * n + j] * x[i]).sum())
        .collect()
}

/// Symmetric eigendecomposition; returns (eigenvectors as columns,
/// eigenvalues), both row-major / in matching order.
pub(crate) fn sym_eigen(n: usize, c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let eig = SymmetricEigen::new(to_matrix(n, c));
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    (to_row_major(&eig.eigenvectors), values)
}

/// Lower Cholesky factor, adding diagonal jitter until the factorisation
/// succeeds.
pub(crate) fn cholesky_with_jitter(n: usize, cov: &[f64]) -> Vec<f64> {
    let m = to_matrix(n, cov);
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..40 {
        let attempt = &m + DMatrix::<f64>::identity(n, n) * jitter;
        if let Some(ch) = attempt.cholesky() {
            return to_row_major(&ch.l());
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 10.0 };
    }
    // diagonal fallback: keeps proposals finite when the sample set collapsed
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = m[(i, i)].max(scale * 1e-12).sqrt();
    }
    out
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    DVector::from_row_slice(v).norm()
}
