//! Dense linear-algebra helpers shared by the solver and the certificate engine.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Result, SviError};

const EIGEN_MAX_SWEEPS: usize = 100_000;

/// `(A + Aᵀ) / 2`.
pub fn sym_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute entry; zero for an empty matrix.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted ascending.
/// Columns of the returned matrix are the matching orthonormal eigenvectors.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(SviError::Dimension(format!(
            "eigen-decomposition of a {}x{} matrix",
            a.nrows(),
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok((Vec::new(), DMatrix::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, EIGEN_MAX_SWEEPS)
        .ok_or_else(|| SviError::Eigen(format!("no convergence on a {n}x{n} matrix")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(sym_eigen(a)?.0)
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> Result<f64> {
    Ok(sym_eigenvalues(a)?.first().copied().unwrap_or(f64::INFINITY))
}

/// Spectral norm computed from the largest eigenvalue of the Gram matrix `AᵀA`.
pub fn spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.is_empty() {
        return Ok(0.0);
    }
    let gram = a.transpose() * a;
    let top = sym_eigenvalues(&sym_part(&gram))?
        .last()
        .copied()
        .unwrap_or(0.0);
    Ok(top.max(0.0).sqrt())
}

/// Solves `A x = b` by LU with partial pivoting, retrying once with `A + tikhonov·I`.
pub fn solve_with_fallback(a: &DMatrix<f64>, b: &DVector<f64>, tikhonov: f64) -> Result<DVector<f64>> {
    if let Some(x) = a.clone().lu().solve(b) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let n = a.nrows();
    let shifted = a + DMatrix::identity(n, n) * tikhonov;
    match shifted.lu().solve(b) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(SviError::SingularNewtonSystem),
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}
