//! Small helpers over `nalgebra` dense matrices shared by the filters and fusers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// `(P + Pᵀ) / 2`
pub fn symmetrize(p: &Matrix) -> Matrix {
    (p + p.transpose()) * 0.5
}

pub fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn all_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Cholesky factorization, retried once with a tiny diagonal jitter.
pub fn cholesky(m: &Matrix, what: &'static str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if !all_finite(m) {
        return Err(Error::NonFinite(what));
    }
    if let Some(c) = m.clone().cholesky() {
        return Ok(c);
    }
    let n = m.nrows();
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::NotPositiveDefinite(what));
    }
    let jittered = m + Matrix::identity(n, n) * (1e-12 * scale);
    jittered.cholesky().ok_or(Error::NotPositiveDefinite(what))
}

/// Inverse of a symmetric positive definite matrix, re-symmetrized.
pub fn spd_inverse(m: &Matrix, what: &'static str) -> Result<Matrix> {
    Ok(symmetrize(&cholesky(m, what)?.inverse()))
}

/// Inverse of a symmetric positive definite matrix without any jitter;
/// numerically singular inputs are rejected.
pub fn strict_spd_inverse(m: &Matrix, what: &'static str) -> Result<Matrix> {
    if !all_finite(m) {
        return Err(Error::NonFinite(what));
    }
    let chol = m.clone().cholesky().ok_or(Error::NotPositiveDefinite(what))?;
    let pivots = chol.l_dirty().diagonal();
    let scale = (0..m.nrows()).map(|i| m[(i, i)].abs()).fold(0.0, f64::max);
    let smallest = pivots.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smallest * smallest > 1e-14 * scale) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Ok(symmetrize(&chol.inverse()))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    symmetrize(m)
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &Matrix) -> f64 {
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn check_square(m: &Matrix, n: usize, context: &'static str) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::dims(
            context,
            format!("{n}x{n}"),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(())
}
