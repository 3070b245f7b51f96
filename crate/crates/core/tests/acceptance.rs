//! Acceptance checks. Prints one line per criterion and exits nonzero if
//! any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use modci_core::fusion::{
    bci_fuse, ci_fuse, ci_fuse_optimal, expected_payoff, fused_objective, mbci_fuse, modified_ci_fuse,
    modified_fuse_optimal, modified_precisions, modified_scale_factors, optimize_omega_pair, optimize_omega_simplex,
    precision, MixingWeights, NodeProfile, Objective,
};
use modci_core::gaussian::{kf_predict, kf_update, ContinuousMotionModel, MeasurementModel};
use modci_core::linalg::{Matrix, Vector};
use modci_core::metrics::{score_record, MetricsRow, Role, Spread};
use modci_core::network::run_network;
use modci_core::rbmcda::{death_probability, BirthDeathModel};
use modci_core::rbpf::{AssociationPrior, ClutterModel, RbpfConfig, RbpfTracker};
use modci_core::scenario::ScenarioConfig;
use modci_core::{discretize_ct_model, GaussianEstimate};
use rand::Rng;
use rand_distr::StandardNormal;

use common::*;

struct Verdict {
    id: &'static str,
    pass: bool,
    detail: String,
}

fn timed(id: &'static str, budget: Duration, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let start = Instant::now();
    let (ok, detail) = f();
    let elapsed = start.elapsed();
    let in_time = elapsed < budget;
    Verdict {
        id,
        pass: ok && in_time,
        detail: format!(
            "{detail}; {:.2}s (budget {}s{})",
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", exceeded" }
        ),
    }
}

fn config(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ScenarioConfig::load(&path).expect("shipped config loads")
}

fn a1_rbpf_matches_kalman() -> Verdict {
    timed("A1", Duration::from_secs(5), || {
        let dt = 0.025;
        let motion = discretize_ct_model(&ContinuousMotionModel::planar_turn(0.2, 0.1), dt).unwrap();
        let meas = MeasurementModel::position(4, 2, 0.05).unwrap();
        let mut r = rng(11);
        let mut x = Vector::from_vec(vec![0.0, 0.0, 1.0, 0.5]);
        let q = motion.process_noise.clone().cholesky().unwrap().l();
        let init = GaussianEstimate::new(x.clone(), Matrix::from_diagonal(&Vector::from_vec(vec![0.1, 0.1, 1.0, 1.0])))
            .unwrap();
        let mut tracker = RbpfTracker::new(
            init.clone(),
            motion.clone(),
            meas.clone(),
            ClutterModel::new(100.0, 0.0).unwrap(),
            AssociationPrior::Uniform,
            RbpfConfig::default(),
            5,
        )
        .unwrap();
        let mut kf = init;
        let mut worst = 0.0f64;
        for _ in 0..500 {
            x = &motion.transition * &x + &q * Vector::from_fn(4, |_, _| r.sample::<f64, _>(StandardNormal));
            let y = &meas.observation * &x + Vector::from_fn(2, |_, _| 0.05f64.sqrt() * r.sample::<f64, _>(StandardNormal));
            kf = kf_update(&kf_predict(&kf, &motion).unwrap(), &y, &meas).unwrap();
            let est = tracker.process_scan(std::slice::from_ref(&y)).unwrap();
            worst = worst.max((est.mean - &kf.mean).amax());
        }
        (worst <= 1e-6, format!("max |mean - KF mean| = {worst:.2e} over 500 steps (tol 1e-6)"))
    })
}

fn a2_reductions() -> Verdict {
    timed("A2", Duration::from_secs(60), || {
        let mut r = rng(21);
        let mut worst_pair = 0.0f64;
        let mut worst_batch = 0.0f64;
        let mut worst_two = 0.0f64;
        for _ in 0..1000 {
            let n = r.random_range(1..=4);
            let (a, b) = (estimate(&mut r, n), estimate(&mut r, n));
            let pa = NodeProfile::new(r.random_range(0.0..=1.0), 1.0, 0.0).unwrap();
            let pb = NodeProfile::new(r.random_range(0.0..=1.0), 1.0, 0.0).unwrap();
            let m = modified_ci_fuse(&a, &b, &pa, &pb).unwrap();
            let c = ci_fuse_optimal(&[&a, &b], Objective::Trace).unwrap().estimate;
            worst_pair = worst_pair.max((&m.mean - &c.mean).amax()).max(max_abs_diff(&m.cov, &c.cov));

            let k = r.random_range(3..=4);
            let inputs: Vec<GaussianEstimate> = (0..k).map(|_| estimate(&mut r, n)).collect();
            let with: Vec<(GaussianEstimate, NodeProfile)> = inputs
                .iter()
                .map(|e| (e.clone(), NodeProfile::new(r.random_range(0.0..=1.0), 1.0, 0.0).unwrap()))
                .collect();
            let mb = mbci_fuse(&with).unwrap();
            let refs: Vec<&GaussianEstimate> = inputs.iter().collect();
            let bc = ci_fuse_optimal(&refs, Objective::Trace).unwrap();
            let bc_fixed = bci_fuse(&inputs, &bc.weights).unwrap();
            worst_batch = worst_batch
                .max((&mb.mean - &bc_fixed.mean).amax())
                .max(max_abs_diff(&mb.cov, &bc_fixed.cov));

            let w = MixingWeights::pair(r.random_range(0.0..=1.0)).unwrap();
            let two = bci_fuse(&[a.clone(), b.clone()], &w).unwrap();
            let pair = ci_fuse(&a, &b, &w).unwrap();
            worst_two = worst_two.max((&two.mean - &pair.mean).amax()).max(max_abs_diff(&two.cov, &pair.cov));
        }
        let worst = worst_pair.max(worst_batch).max(worst_two);
        (
            worst <= 1e-12,
            format!(
                "max diff: modified vs CI {worst_pair:.1e}, MBCI vs BCI {worst_batch:.1e}, batch(2) vs pair {worst_two:.1e} (tol 1e-12, 1000 trials)"
            ),
        )
    })
}

fn a3_single_target_ordering() -> Verdict {
    timed("A3", Duration::from_secs(120), || {
        let cfg = config("single_target.toml");
        let rows: Vec<MetricsRow> = (0..50u64)
            .flat_map(|s| score_record(&run_network(&cfg, s).unwrap()).unwrap())
            .collect();
        let pick = |role: Role, id: u32, alg: &str| -> Vec<&MetricsRow> {
            rows.iter()
                .filter(|r| r.role == role && r.source_id == id && r.algorithm == alg)
                .collect()
        };
        let med = |rs: &[&MetricsRow], f: fn(&MetricsRow) -> f64| Spread::of(rs.iter().map(|r| f(r))).median;
        let mut parts = Vec::new();
        let mut ok_kf = true;
        for node in [1, 2] {
            let kf = med(&pick(Role::Baseline, node, "kf"), |r| r.mse);
            let pf = med(&pick(Role::Monitoring, node, "rbpf"), |r| r.mse);
            ok_kf &= kf > 5.0 * pf;
            parts.push(format!("node {node} KF {kf:.3} vs RBPF {pf:.4}"));
        }
        let ci = pick(Role::Processing, 3, "ci");
        let mc = pick(Role::Processing, 3, "modci");
        let (ci_mse, mc_mse) = (med(&ci, |r| r.mse), med(&mc, |r| r.mse));
        let (ci_ncm, mc_ncm) = (med(&ci, |r| r.mncm), med(&mc, |r| r.mncm));
        let wins = ci
            .iter()
            .zip(&mc)
            .filter(|(c, m)| {
                assert_eq!(c.seed, m.seed);
                m.mncm <= c.mncm
            })
            .count();
        let frac = wins as f64 / ci.len() as f64;
        let checks = [
            ("i", ok_kf),
            ("ii", mc_mse <= ci_mse),
            ("iii", mc_ncm <= ci_ncm),
            ("iv", frac >= 0.9),
        ];
        let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
        parts.push(format!("MSE modci {mc_mse:.5} vs ci {ci_mse:.5}"));
        parts.push(format!("MNCM modci {mc_ncm:.6} vs ci {ci_ncm:.6}"));
        parts.push(format!("modci MNCM <= ci on {wins}/50 seeds"));
        let status = if failed.is_empty() {
            "all of (i)-(iv) hold".to_string()
        } else {
            format!("failing: ({})", failed.join(", "))
        };
        (failed.is_empty(), format!("{status}; {}", parts.join("; ")))
    })
}

fn a4_consistency() -> Verdict {
    timed("A4", Duration::from_secs(30), || {
        let mut r = rng(41);
        let mut worst = [f64::INFINITY; 4];
        for _ in 0..1000 {
            let n = r.random_range(1..=4);
            for (slot, (k, modified)) in [(2, false), (2, true), (3 + r.random_range(0..=1), false), (3 + r.random_range(0..=1), true)]
                .into_iter()
                .enumerate()
            {
                let inputs = correlated_inputs(&mut r, k, n);
                let ests: Vec<GaussianEstimate> = inputs
                    .marginals
                    .iter()
                    .map(|p| GaussianEstimate::new(Vector::zeros(n), p.clone()).unwrap())
                    .collect();
                let refs: Vec<&GaussianEstimate> = ests.iter().collect();
                let mut precisions: Vec<Matrix> = ests.iter().map(|e| precision(e).unwrap()).collect();
                let fused = if modified {
                    let profiles: Vec<NodeProfile> = (0..k).map(|_| profile(&mut r)).collect();
                    for (p, f) in precisions.iter_mut().zip(modified_scale_factors(&profiles)) {
                        *p *= f;
                    }
                    let pairs: Vec<(&GaussianEstimate, &NodeProfile)> = refs.iter().copied().zip(&profiles).collect();
                    modified_fuse_optimal(&pairs, Objective::Trace).unwrap()
                } else {
                    ci_fuse_optimal(&refs, Objective::Trace).unwrap()
                };
                let truth = true_fused_covariance(&inputs.joint, &fused.estimate.cov, fused.weights.as_slice(), &precisions);
                worst[slot] = worst[slot].min(min_eig(&(&fused.estimate.cov - truth)));
            }
        }
        let ok = worst.iter().all(|w| *w >= -1e-9);
        (
            ok,
            format!(
                "min eig(P - true P) over 1000 trials: CI {:.1e}, modified CI {:.1e}, BCI {:.1e}, MBCI {:.1e} (tol -1e-9)",
                worst[0], worst[1], worst[2], worst[3]
            ),
        )
    })
}

fn a5_optimizers() -> Verdict {
    timed("A5", Duration::from_secs(60), || {
        let mut r = rng(51);
        let mut pair_gap = f64::NEG_INFINITY;
        for _ in 0..200 {
            let n = r.random_range(1..=4);
            let (pa, pb) = (spd(&mut r, n, 0.1, 10.0), spd(&mut r, n, 0.1, 10.0));
            let f = |w: f64| fused_objective(&(&pa * w + &pb * (1.0 - w)), Objective::Trace);
            let grid = (0..10_000).map(|i| f(i as f64 / 9_999.0)).fold(f64::INFINITY, f64::min);
            pair_gap = pair_gap.max(f(optimize_omega_pair(&pa, &pb)) - grid);
        }
        let mut simplex_gap = f64::NEG_INFINITY;
        for k in [3usize, 4] {
            for _ in 0..50 {
                let n = r.random_range(1..=4);
                let ps: Vec<Matrix> = (0..k).map(|_| spd(&mut r, n, 0.1, 10.0)).collect();
                let f = |w: &[f64]| {
                    let sum = ps.iter().zip(w).fold(Matrix::zeros(n, n), |acc, (p, wi)| acc + p * *wi);
                    fused_objective(&sum, Objective::Trace)
                };
                let oracle = (0..100_000).map(|_| f(&dirichlet(&mut r, k))).fold(f64::INFINITY, f64::min);
                simplex_gap = simplex_gap.max(f(optimize_omega_simplex(&ps).as_slice()) - oracle);
            }
        }
        (
            pair_gap <= 1e-6 && simplex_gap <= 1e-4,
            format!(
                "worst excess over brute force: pair {pair_gap:.1e} (tol 1e-6, 200 pairs), simplex {simplex_gap:.1e} (tol 1e-4, 100 sets)"
            ),
        )
    })
}

struct MultiRuns {
    rows: Vec<MetricsRow>,
    elapsed: Duration,
}

fn multi_target_runs() -> MultiRuns {
    let start = Instant::now();
    let cfg = config("multi_target.toml");
    let rows = (0..20u64)
        .flat_map(|s| score_record(&run_network(&cfg, s).unwrap()).unwrap())
        .collect();
    MultiRuns {
        rows,
        elapsed: start.elapsed(),
    }
}

fn a6_multi_target_ordering(runs: &MultiRuns) -> Verdict {
    timed("A6", Duration::from_secs(300).saturating_sub(runs.elapsed), || {
        let mut ok = true;
        let mut parts = Vec::new();
        for proc in [8, 9, 10] {
            let med = |alg: &str| {
                Spread::of(
                    runs.rows
                        .iter()
                        .filter(|r| r.role == Role::Processing && r.source_id == proc && r.algorithm == alg)
                        .map(|r| r.mncm),
                )
                .median
            };
            let (ci, mc) = (med("ci"), med("modci"));
            ok &= mc <= ci;
            parts.push(format!("node {proc}: modci {mc:.5} vs ci {ci:.5}"));
        }
        (ok, format!("median MNCM over 20 seeds ({}); shared runs took {:.1}s", parts.join(", "), runs.elapsed.as_secs_f64()))
    })
}

fn a7_count_tracking(runs: &MultiRuns) -> Verdict {
    timed("A7", Duration::from_secs(300), || {
        let mut worst = f64::INFINITY;
        let mut parts = Vec::new();
        for node in 1..=7 {
            let m = Spread::of(
                runs.rows
                    .iter()
                    .filter(|r| r.role == Role::Monitoring && r.source_id == node)
                    .filter_map(|r| r.count_within_one),
            )
            .median;
            worst = worst.min(m);
            parts.push(format!("{node}:{m:.3}"));
        }
        (
            worst >= 0.6,
            format!("median fraction of steps with count within 1, per node [{}] (need >= 0.6)", parts.join(" ")),
        )
    })
}

/// Composite Simpson integral of the shape-2 gamma density.
fn gamma2_cdf(x: f64, scale: f64) -> f64 {
    let pdf = |t: f64| t * (-t / scale).exp() / (scale * scale);
    let n = 10_000;
    let h = x / n as f64;
    let inner: f64 = (1..n).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * pdf(i as f64 * h)).sum();
    (pdf(0.0) + pdf(x) + inner) * h / 3.0
}

fn a8_death_model() -> Verdict {
    timed("A8", Duration::from_secs(5), || {
        let model = BirthDeathModel {
            p_birth: 0.01,
            lifetime_shape: 2.0,
            lifetime_scale: 0.5,
            max_targets: 20,
        };
        let p = death_probability(0.025, 0.0, 0.0, &model);
        let oracle = gamma2_cdf(0.025, 0.5);
        let ok = (p - 0.001210).abs() <= 1e-6 && (p - oracle).abs() <= 1e-6;
        (ok, format!("death probability {p:.7}, quadrature {oracle:.7} (target 0.001210 +- 1e-6)"))
    })
}

fn a9_payoff_identity() -> Verdict {
    timed("A9", Duration::from_secs(30), || {
        let mut r = rng(91);
        let mut worst = 0.0f64;
        for _ in 0..1000 {
            let n = r.random_range(1..=4);
            let (pa, pb) = (spd(&mut r, n, 0.1, 10.0), spd(&mut r, n, 0.1, 10.0));
            let (a, b) = (profile(&mut r), profile(&mut r));
            let w = r.random_range(0.0..=1.0);
            let payoff = expected_payoff(&pa, &pb, &a, &b, w).unwrap();
            let (ia, ib) = modified_precisions(&pa, &pb, &a, &b).unwrap();
            worst = worst.max((payoff - (ia * w + ib * (1.0 - w)).trace()).abs());
        }
        (worst <= 1e-10, format!("max |payoff - tr(fused precision)| = {worst:.1e} over 1000 inputs (tol 1e-10)"))
    })
}

fn main() {
    let mut verdicts = vec![
        a1_rbpf_matches_kalman(),
        a2_reductions(),
        a3_single_target_ordering(),
        a4_consistency(),
        a5_optimizers(),
    ];
    let runs = multi_target_runs();
    verdicts.push(a6_multi_target_ordering(&runs));
    verdicts.push(a7_count_tracking(&runs));
    verdicts.push(a8_death_model());
    verdicts.push(a9_payoff_identity());

    for v in &verdicts {
        println!("{} {}: {}", v.id, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!("{} of {} criteria pass", verdicts.len() - failed.len(), verdicts.len());
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
