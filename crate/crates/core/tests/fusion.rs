mod common;

use common::*;
use modci_core::fusion::{
    bci_fuse, ci_fuse, ci_fuse_optimal, modified_fuse_optimal, modified_scale_factors, optimize_omega_pair,
    optimize_omega_simplex, precision, MixingWeights, NodeProfile, Objective,
};
use modci_core::linalg::Matrix;
use modci_core::GaussianEstimate;
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn fused_covariance_bounds_true_error(seed in any::<u64>(), modified in any::<bool>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..=4);
        let k = r.random_range(2..=4);
        let inputs = correlated_inputs(&mut r, k, n);
        let ests: Vec<GaussianEstimate> = inputs
            .marginals
            .iter()
            .map(|p| GaussianEstimate::new(modci_core::linalg::Vector::zeros(n), p.clone()).unwrap())
            .collect();
        let refs: Vec<&GaussianEstimate> = ests.iter().collect();
        let mut precisions: Vec<Matrix> = ests.iter().map(|e| precision(e).unwrap()).collect();
        let fused = if modified {
            let profiles: Vec<NodeProfile> = (0..k).map(|_| profile(&mut r)).collect();
            for (p, f) in precisions.iter_mut().zip(modified_scale_factors(&profiles)) {
                *p *= f;
            }
            let pairs: Vec<_> = refs.iter().copied().zip(&profiles).collect();
            modified_fuse_optimal(&pairs, Objective::Trace).unwrap()
        } else {
            ci_fuse_optimal(&refs, Objective::Trace).unwrap()
        };
        let truth = true_fused_covariance(&inputs.joint, &fused.estimate.cov, fused.weights.as_slice(), &precisions);
        prop_assert!(min_eig(&(&fused.estimate.cov - truth)) >= -1e-9);
    }

    #[test]
    fn scale_factors_inflate_never_shrink(seed in any::<u64>()) {
        let mut r = rng(seed);
        let k = r.random_range(2..=6);
        let profiles: Vec<NodeProfile> = (0..k).map(|_| profile(&mut r)).collect();
        for (f, p) in modified_scale_factors(&profiles).iter().zip(&profiles) {
            prop_assert!(*f <= 1.0 && *f >= p.p_detect);
        }
    }

    #[test]
    fn weights_ignore_common_precision_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut r = rng(seed);
        let n = r.random_range(1..=4);
        let (a, b) = (spd(&mut r, n, 0.1, 10.0), spd(&mut r, n, 0.1, 10.0));
        prop_assert!((optimize_omega_pair(&a, &b) - optimize_omega_pair(&(&a * c), &(&b * c))).abs() < 1e-6);
        let ps: Vec<Matrix> = (0..3).map(|_| spd(&mut r, n, 0.1, 10.0)).collect();
        let scaled: Vec<Matrix> = ps.iter().map(|p| p * c).collect();
        let objective = |w: &MixingWeights| {
            let sum = ps.iter().zip(w.as_slice()).fold(Matrix::zeros(n, n), |acc, (p, wi)| acc + p * *wi);
            sum.try_inverse().unwrap().trace()
        };
        let (w1, w2) = (optimize_omega_simplex(&ps), optimize_omega_simplex(&scaled));
        let (f1, f2) = (objective(&w1), objective(&w2));
        prop_assert!((f1 - f2).abs() <= 1e-6 * f1);
    }

    #[test]
    fn batch_of_two_is_pairwise(seed in any::<u64>(), w in 0.0f64..=1.0) {
        let mut r = rng(seed);
        let n = r.random_range(1..=4);
        let (a, b) = (estimate(&mut r, n), estimate(&mut r, n));
        let mw = MixingWeights::pair(w).unwrap();
        let batch = bci_fuse(&[a.clone(), b.clone()], &mw).unwrap();
        let pair = ci_fuse(&a, &b, &mw).unwrap();
        prop_assert!(max_abs_diff(&batch.cov, &pair.cov) <= 1e-12);
        prop_assert!((&batch.mean - &pair.mean).amax() <= 1e-12);
    }

    #[test]
    fn optimal_fusion_beats_every_input(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.random_range(1..=4);
        let k = r.random_range(2..=4);
        let ests: Vec<GaussianEstimate> = (0..k).map(|_| estimate(&mut r, n)).collect();
        let refs: Vec<&GaussianEstimate> = ests.iter().collect();
        let fused = ci_fuse_optimal(&refs, Objective::Trace).unwrap();
        let best = ests.iter().map(|e| e.cov.trace()).fold(f64::INFINITY, f64::min);
        prop_assert!(fused.estimate.cov.trace() <= best * (1.0 + 1e-9));
        let w = fused.weights.as_slice();
        prop_assert!(w.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(fused.estimate.satisfies_invariants());
    }
}

#[test]
fn scale_factor_grid_matches_two_node_closed_form() {
    let grid = [0.0, 0.1, 0.5, 0.9, 1.0];
    let chis = [0.05, 0.5, 0.9, 1.0];
    for &p in &grid {
        for &q in &grid {
            for &xa in &chis {
                for &xb in &chis {
                    let f = modified_scale_factors(&[
                        NodeProfile::new(p, xa, 0.0).unwrap(),
                        NodeProfile::new(q, xb, 0.0).unwrap(),
                    ]);
                    let fa = p + (1.0 - p) * xa * (q + (1.0 - q) * xb);
                    let fb = q + (1.0 - q) * xb * (p + (1.0 - p) * xa);
                    assert!((f[0] - fa).abs() < 1e-15 && (f[1] - fb).abs() < 1e-15);
                }
            }
        }
    }
}

#[test]
fn unit_chi_reduces_to_plain_ci() {
    let mut r = rng(3);
    for _ in 0..100 {
        let profiles: Vec<NodeProfile> =
            (0..4).map(|_| NodeProfile::new(r.random_range(0.0..=1.0), 1.0, 0.0).unwrap()).collect();
        assert!(modified_scale_factors(&profiles).iter().all(|f| *f == 1.0));
    }
}

#[test]
fn identical_detection_gives_common_factor() {
    let a = NodeProfile::new(0.7, 0.8, 0.0).unwrap();
    let f = modified_scale_factors(&[a, a]);
    assert_eq!(f[0], f[1]);
    let alpha = 0.7 + 0.7 * 0.3 * 0.8 + 0.09 * 0.64;
    assert!((f[0] - alpha).abs() < 1e-15);
}

#[test]
fn rejects_invalid_profiles_and_weights() {
    assert!(NodeProfile::new(1.5, 0.5, 0.0).is_err());
    assert!(NodeProfile::new(0.5, 0.0, 0.0).is_err());
    assert!(NodeProfile::new(0.5, 1.2, 0.0).is_err());
    assert!(MixingWeights::new(vec![0.7, 0.7]).is_err());
    assert!(MixingWeights::pair(-0.1).is_err());
}
