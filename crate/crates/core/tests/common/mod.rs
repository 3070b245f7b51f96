#![allow(dead_code)]

use modci_core::fusion::NodeProfile;
use modci_core::linalg::{Matrix, Vector};
use modci_core::GaussianEstimate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut impl Rng, r: usize, c: usize) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random orthogonal matrix from the QR factor of a Gaussian matrix.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> Matrix {
    normal_matrix(rng, n, n).qr().q()
}

/// SPD matrix with eigenvalues drawn uniformly from `[lo, hi]`.
pub fn spd(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Matrix {
    let q = orthogonal(rng, n);
    let d = Vector::from_fn(n, |_, _| rng.random_range(lo..hi));
    let m = &q * Matrix::from_diagonal(&d) * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn estimate(rng: &mut impl Rng, n: usize) -> GaussianEstimate {
    let mean = Vector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    GaussianEstimate::new(mean, spd(rng, n, 0.1, 5.0)).unwrap()
}

pub fn profile(rng: &mut impl Rng) -> NodeProfile {
    NodeProfile::new(rng.random_range(0.0..=1.0), rng.random_range(0.05..=1.0), 0.0).unwrap()
}

/// Uniform draw from the probability simplex (flat Dirichlet).
pub fn dirichlet(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Joint covariance of `k` stacked `n`-dimensional errors with arbitrary
/// cross-correlation, and marginals inflated to dominate the true blocks.
pub struct CorrelatedInputs {
    pub joint: Matrix,
    pub marginals: Vec<Matrix>,
}

pub fn correlated_inputs(rng: &mut impl Rng, k: usize, n: usize) -> CorrelatedInputs {
    let a = normal_matrix(rng, k * n, k * n);
    let joint = &a * a.transpose() / (k * n) as f64 + Matrix::identity(k * n, k * n) * 0.05;
    let marginals = (0..k)
        .map(|i| {
            let block = joint.view((i * n, i * n), (n, n)).into_owned();
            let b = normal_matrix(rng, n, n) * rng.random_range(0.0..1.0);
            let m = block + &b * b.transpose();
            (&m + m.transpose()) * 0.5
        })
        .collect();
    CorrelatedInputs { joint, marginals }
}

/// Error covariance of `Σ Kᵢ eᵢ` with gains `Kᵢ = P ωᵢ Πᵢ` under the joint
/// error covariance.
pub fn true_fused_covariance(joint: &Matrix, fused_cov: &Matrix, weights: &[f64], precisions: &[Matrix]) -> Matrix {
    let n = fused_cov.nrows();
    let k = precisions.len();
    let mut gain = Matrix::zeros(n, k * n);
    for i in 0..k {
        let g = fused_cov * &precisions[i] * weights[i];
        gain.view_mut((0, i * n), (n, n)).copy_from(&g);
    }
    &gain * joint * gain.transpose()
}

pub fn min_eig(m: &Matrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}
