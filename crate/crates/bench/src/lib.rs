//! Shared fixtures for the criterion benches.

use std::path::PathBuf;

use modci_core::fusion::NodeProfile;
use modci_core::linalg::{Matrix, Vector};
use modci_core::scenario::ScenarioConfig;
use modci_core::GaussianEstimate;

/// Deterministic, well-conditioned SPD matrix that varies with `k`.
pub fn spd(n: usize, k: usize) -> Matrix {
    let a = Matrix::from_fn(n, n, |i, j| (((i * 7 + j * 3 + k * 11) % 13) as f64 - 6.0) / 6.0);
    &a * a.transpose() + Matrix::identity(n, n) * (0.5 + k as f64 * 0.1)
}

pub fn estimates(count: usize, n: usize) -> Vec<GaussianEstimate> {
    (0..count)
        .map(|k| GaussianEstimate::new(Vector::from_fn(n, |i, _| (i + k) as f64), spd(n, k)).unwrap())
        .collect()
}

pub fn profiles(count: usize) -> Vec<NodeProfile> {
    (0..count)
        .map(|k| NodeProfile::with_step(0.7 + 0.05 * k as f64, 0.025, 0.5).unwrap())
        .collect()
}

pub fn shipped_config(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ScenarioConfig::load(&path).expect("shipped config loads")
}
