//! End-to-end network simulation: ground truth, per-node measurements,
//! monitoring-node tracking, and association plus fusion at processing
//! nodes.
//!
//! Every random draw comes from a stream seeded by [`derive_seed`] from the
//! run seed and a stage tag, so runs are reproducible bit for bit.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::fusion::{ci_fuse_optimal, modified_fuse_optimal, NodeProfile, Objective};
use crate::gaussian::{kf_predict, kf_update, GaussianEstimate, MeasurementModel, MotionModel};
use crate::linalg::{self, Matrix, Vector};
use crate::rbmcda::{MultiTargetModels, MultiTargetSet, RbmcdaConfig, RbmcdaTracker};
use crate::rbpf::{ClutterModel, Proposal, RbpfConfig, RbpfTracker};
use crate::record::{
    to_vec, FusedEstimate, FusedStep, FusedStream, GroundTruth, NodeStep, NodeStream, Region, RunRecord,
    ScanData, TrackEstimate, TruthTrack, RECORD_FORMAT,
};
use crate::rng::{derive_seed, stream_rng};
use crate::scenario::{ClutterUnit, FusionMethod, Grouping, NodeConfig, NodeId, ScenarioConfig, TrackerMode};

const TAG_TRUTH: u64 = 1;
const TAG_MEASURE: u64 = 1_000;
const TAG_TRACK: u64 = 2_000;

/// Draws `x ~ N(0, Q)` through a Cholesky factor; zero when `Q` is zero.
fn gaussian_noise(chol: Option<&Matrix>, n: usize, rng: &mut impl Rng) -> Vector {
    match chol {
        None => Vector::zeros(n),
        Some(l) => {
            let z = Vector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
            l * z
        }
    }
}

fn noise_factor(q: &Matrix, what: &'static str) -> Result<Option<Matrix>> {
    if linalg::max_abs(q) == 0.0 {
        return Ok(None);
    }
    Ok(Some(linalg::cholesky(q, what)?.l()))
}

/// Samples every scheduled target's trajectory on the scan grid.
pub fn simulate_truth(config: &ScenarioConfig, motion: &MotionModel, seed: u64) -> Result<GroundTruth> {
    let steps = config.steps();
    let dt = config.scenario.dt;
    let chol = noise_factor(&motion.process_noise, "process noise")?;
    let mut rng = stream_rng(derive_seed(seed, TAG_TRUTH), 0);
    let mut targets = Vec::with_capacity(config.targets.len());
    for (i, t) in config.targets.iter().enumerate() {
        // Grid index j has time j·dt; scan k sits at j = k + 1.
        let born = (t.birth / dt).round() as usize;
        let dies = t.death.map_or(steps + 1, |d| (d / dt).round() as usize);
        let first = born.max(1);
        let mut x = Vector::from_row_slice(&t.initial);
        let mut states = Vec::with_capacity(dies.saturating_sub(first));
        for j in born..dies {
            if j > born {
                x = &motion.transition * &x + gaussian_noise(chol.as_ref(), 4, &mut rng);
            }
            if j >= first {
                states.push(to_vec(&x));
            }
        }
        targets.push(TruthTrack {
            id: i as u64 + 1,
            start_step: first - 1,
            states,
        });
    }
    Ok(GroundTruth { steps, targets })
}

/// Truth bounding box padded by `padding` of its extent on each side. Axes
/// with no extent get unit width.
pub fn infer_region(truth: &GroundTruth, padding: f64) -> Result<Region> {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for s in truth.targets.iter().flat_map(|t| &t.states) {
        for i in 0..2 {
            min[i] = min[i].min(s[i]);
            max[i] = max[i].max(s[i]);
        }
    }
    if !min[0].is_finite() {
        return Region::new([-0.5, -0.5], [0.5, 0.5]);
    }
    for i in 0..2 {
        let extent = max[i] - min[i];
        let pad = if extent > 0.0 { padding * extent } else { 0.5 };
        min[i] -= pad;
        max[i] += pad;
    }
    Region::new(min, max)
}

pub fn region_for(config: &ScenarioConfig, truth: &GroundTruth) -> Result<Region> {
    match config.region.bounds {
        Some(b) => Region::new([b[0][0], b[1][0]], [b[0][1], b[1][1]]),
        None => infer_region(truth, config.region.padding),
    }
}

/// Expected clutter count per scan for a node.
pub fn clutter_mean(config: &ScenarioConfig, node: &NodeConfig, region: &Region) -> f64 {
    match config.clutter.unit {
        ClutterUnit::PerScan => node.clutter_density,
        ClutterUnit::PerVolume => node.clutter_density * region.volume(),
    }
}

/// Per-scan measurements of one node: each alive target is detected with
/// probability `p_detect` and observed through `meas`; a Poisson number of
/// clutter points is spread uniformly over the region; order is shuffled.
pub fn generate_measurements(
    truth: &GroundTruth,
    node: NodeId,
    profile: &NodeProfile,
    clutter_per_scan: f64,
    meas: &MeasurementModel,
    region: &Region,
    seed: u64,
) -> Result<ScanData> {
    let chol = noise_factor(&meas.noise, "measurement noise")?;
    let m = meas.meas_dim();
    let mut rng = stream_rng(seed, 0);
    let poisson = if clutter_per_scan > 0.0 {
        Some(Poisson::new(clutter_per_scan).map_err(|e| Error::param("clutter", e.to_string()))?)
    } else {
        None
    };
    let mut scans = Vec::with_capacity(truth.steps);
    for k in 0..truth.steps {
        let mut scan: Vec<Vec<f64>> = Vec::new();
        for t in &truth.targets {
            if let Some(x) = t.state(k) {
                if rng.random::<f64>() < profile.p_detect {
                    let y = &meas.observation * Vector::from_row_slice(x) + gaussian_noise(chol.as_ref(), m, &mut rng);
                    scan.push(to_vec(&y));
                }
            }
        }
        if let Some(p) = &poisson {
            let n = p.sample(&mut rng) as usize;
            for _ in 0..n {
                let c: Vec<f64> = (0..2)
                    .map(|i| region.min[i] + rng.random::<f64>() * (region.max[i] - region.min[i]))
                    .collect();
                scan.push(c);
            }
        }
        scan.shuffle(&mut rng);
        scans.push(scan);
    }
    Ok(ScanData {
        node,
        clutter_mean: clutter_per_scan,
        scans,
    })
}

fn scan_vectors(scan: &[Vec<f64>]) -> Vec<Vector> {
    scan.iter().map(|y| Vector::from_row_slice(y)).collect()
}

/// Everything a monitoring node needs besides its scans.
#[derive(Debug, Clone)]
pub struct NodeContext {
    pub motion: MotionModel,
    pub meas: MeasurementModel,
    pub clutter: ClutterModel,
    pub region: Region,
}

/// Prior of a newborn target: centered on the region with a standard
/// deviation of half its span per axis.
pub fn birth_prior(config: &ScenarioConfig, region: &Region) -> Result<GaussianEstimate> {
    let c = region.center();
    let s = region.span();
    let v = config.tracker.birth.velocity_var;
    GaussianEstimate::new(
        Vector::from_vec(vec![c[0], c[1], 0.0, 0.0]),
        Matrix::from_diagonal(&Vector::from_vec(vec![s[0] * s[0] / 4.0, s[1] * s[1] / 4.0, v, v])),
    )
}

/// Runs the node tracker over its scans and emits one step record per scan.
pub fn run_monitoring_node(
    scans: &ScanData,
    config: &ScenarioConfig,
    ctx: &NodeContext,
    seed: u64,
) -> Result<NodeStream> {
    let t = &config.tracker;
    let mut steps = Vec::with_capacity(scans.scans.len());
    match t.mode {
        TrackerMode::Single => {
            let mut tracker = RbpfTracker::new(
                config.initial_estimate()?,
                ctx.motion.clone(),
                ctx.meas.clone(),
                ctx.clutter,
                t.association_prior.clone(),
                RbpfConfig {
                    n_particles: t.particles,
                    order: t.order,
                    resample_threshold: t.resample_threshold,
                    proposal: Proposal::Optimal,
                },
                seed,
            )?;
            for (k, scan) in scans.scans.iter().enumerate() {
                let est = tracker.process_scan(&scan_vectors(scan))?;
                steps.push(NodeStep {
                    step: k,
                    time: config.step_time(k),
                    count: None,
                    estimates: vec![TrackEstimate::from_estimate(1, &est)],
                });
            }
            Ok(NodeStream {
                node: scans.node,
                algorithm: "rbpf".into(),
                steps,
            })
        }
        TrackerMode::Multi => {
            let models = MultiTargetModels {
                motion: ctx.motion.clone(),
                meas: ctx.meas.clone(),
                clutter: ctx.clutter,
                birth_death: config.birth_death(),
                assoc_prior: t.association_prior.clone(),
                birth_prior: birth_prior(config, &ctx.region)?,
                proposal: Proposal::Optimal,
            };
            let mut tracker = RbmcdaTracker::new(
                MultiTargetSet::empty(t.particles, t.order, 0.0)?,
                models,
                RbmcdaConfig {
                    n_particles: t.particles,
                    order: t.order,
                    resample_threshold: t.resample_threshold,
                    count_estimator: t.count_estimator,
                },
                seed,
            )?;
            for (k, scan) in scans.scans.iter().enumerate() {
                let time = config.step_time(k);
                let snap = tracker.process_scan(time, &scan_vectors(scan))?;
                steps.push(NodeStep {
                    step: k,
                    time,
                    count: Some(snap.count),
                    estimates: snap
                        .targets
                        .iter()
                        .map(|(id, est)| TrackEstimate::from_estimate(*id, est))
                        .collect(),
                });
            }
            Ok(NodeStream {
                node: scans.node,
                algorithm: "rbmcda".into(),
                steps,
            })
        }
    }
}

/// Plain Kalman filter fed with every measurement of every scan, clutter
/// included.
pub fn run_kf_baseline(scans: &ScanData, config: &ScenarioConfig, ctx: &NodeContext) -> Result<NodeStream> {
    let mut est = config.initial_estimate()?;
    let mut steps = Vec::with_capacity(scans.scans.len());
    for (k, scan) in scans.scans.iter().enumerate() {
        est = kf_predict(&est, &ctx.motion)?;
        for y in scan_vectors(scan) {
            est = kf_update(&est, &y, &ctx.meas)?;
        }
        steps.push(NodeStep {
            step: k,
            time: config.step_time(k),
            count: None,
            estimates: vec![TrackEstimate::from_estimate(1, &est)],
        });
    }
    Ok(NodeStream {
        node: scans.node,
        algorithm: "kf".into(),
        steps,
    })
}

/// An estimate as received by a processing node.
#[derive(Debug, Clone, PartialEq)]
pub struct Received {
    pub node: NodeId,
    pub track: u64,
    pub est: GaussianEstimate,
}

fn position_distance(a: &GaussianEstimate, b: &GaussianEstimate) -> f64 {
    ((a.mean[0] - b.mean[0]).powi(2) + (a.mean[1] - b.mean[1]).powi(2)).sqrt()
}

/// Greedy agglomerative grouping on position distance with complete
/// linkage: the closest pair of groups is merged while their largest
/// member distance is within `threshold` and they share no node. Returns
/// index groups, each sorted, ordered by their first index; singletons
/// included.
pub fn associate_estimates(received: &[Received], threshold: f64) -> Vec<Vec<usize>> {
    let n = received.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| position_distance(&received[i].est, &received[j].est)).collect())
        .collect();
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let shares_node = groups[a]
                    .iter()
                    .any(|i| groups[b].iter().any(|j| received[*i].node == received[*j].node));
                if shares_node {
                    continue;
                }
                let linkage = groups[a]
                    .iter()
                    .flat_map(|i| groups[b].iter().map(|j| dist[*i][*j]))
                    .fold(0.0, f64::max);
                if linkage <= threshold && best.is_none_or(|(d, _, _)| linkage < d) {
                    best = Some((linkage, a, b));
                }
            }
        }
        let Some((_, a, b)) = best else { break };
        let merged = groups.remove(b);
        groups[a].extend(merged);
        groups[a].sort_unstable();
    }
    groups.sort_by_key(|g| g[0]);
    groups
}

/// Fuses each group with `method`; groups of one are passed through and
/// flagged unfused.
pub fn run_processing_node(
    groups: &[Vec<usize>],
    received: &[Received],
    profiles: &BTreeMap<NodeId, NodeProfile>,
    method: FusionMethod,
    objective: Objective,
) -> Result<Vec<FusedEstimate>> {
    groups
        .iter()
        .map(|g| {
            let mut members: Vec<&Received> = g.iter().map(|i| &received[*i]).collect();
            members.sort_by_key(|r| (r.node, r.track));
            let key = format!("{}:{}", members[0].node, members[0].track);
            let ids: Vec<(NodeId, u64)> = members.iter().map(|r| (r.node, r.track)).collect();
            if members.len() == 1 {
                let e = &members[0].est;
                return Ok(FusedEstimate {
                    key,
                    members: ids,
                    fused: false,
                    weights: vec![1.0],
                    mean: to_vec(&e.mean),
                    cov: e.cov_row_major(),
                });
            }
            let fused = if method.is_modified() {
                let profs = members
                    .iter()
                    .map(|r| {
                        profiles
                            .get(&r.node)
                            .ok_or_else(|| Error::config("processors", format!("no profile for node {}", r.node)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let inputs: Vec<(&GaussianEstimate, &NodeProfile)> =
                    members.iter().map(|r| &r.est).zip(profs).collect();
                modified_fuse_optimal(&inputs, objective)?
            } else {
                let inputs: Vec<&GaussianEstimate> = members.iter().map(|r| &r.est).collect();
                ci_fuse_optimal(&inputs, objective)?
            };
            Ok(FusedEstimate {
                key,
                members: ids,
                fused: true,
                weights: fused.weights.as_slice().to_vec(),
                mean: to_vec(&fused.estimate.mean),
                cov: fused.estimate.cov_row_major(),
            })
        })
        .collect()
}

fn stage<T>(name: impl FnOnce() -> String, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name()))
}

/// Runs the whole pipeline for one seed and returns its record.
pub fn run_network(config: &ScenarioConfig, seed: u64) -> Result<RunRecord> {
    stage(|| "config".into(), config.validate())?;
    let motion = stage(|| "motion model".into(), config.motion_model())?;
    let meas = stage(|| "measurement model".into(), config.measurement_model())?;
    let truth = stage(|| "truth".into(), simulate_truth(config, &motion, seed))?;
    let region = stage(|| "region".into(), region_for(config, &truth))?;
    let profiles: BTreeMap<NodeId, NodeProfile> =
        config.nodes.iter().map(|n| (n.id, config.profile(n))).collect();

    let mut scans = Vec::with_capacity(config.nodes.len());
    let mut nodes = Vec::with_capacity(config.nodes.len());
    let mut baselines = Vec::new();
    for node in &config.nodes {
        let clutter_per_scan = clutter_mean(config, node, &region);
        let data = stage(
            || format!("measurements of node {}", node.id),
            generate_measurements(
                &truth,
                node.id,
                &profiles[&node.id],
                clutter_per_scan,
                &meas,
                &region,
                derive_seed(seed, TAG_MEASURE + node.id as u64),
            ),
        )?;
        let ctx = NodeContext {
            motion: motion.clone(),
            meas: meas.clone(),
            clutter: ClutterModel::new(region.volume(), clutter_per_scan)?,
            region,
        };
        let stream = stage(
            || format!("monitoring node {}", node.id),
            run_monitoring_node(&data, config, &ctx, derive_seed(seed, TAG_TRACK + node.id as u64)),
        )?;
        if config.scenario.baseline_kf {
            baselines.push(stage(
                || format!("baseline of node {}", node.id),
                run_kf_baseline(&data, config, &ctx),
            )?);
        }
        scans.push(data);
        nodes.push(stream);
    }

    let by_id: BTreeMap<NodeId, &NodeStream> = nodes.iter().map(|s| (s.node, s)).collect();
    let threshold = config.threshold();
    let mut fused = Vec::new();
    for proc in &config.processors {
        let mut per_method: Vec<FusedStream> = config
            .fusion
            .methods
            .iter()
            .map(|m| FusedStream {
                processor: proc.id,
                method: *m,
                steps: Vec::with_capacity(config.steps()),
            })
            .collect();
        for k in 0..config.steps() {
            let mut received = Vec::new();
            for id in &proc.inputs {
                for e in &by_id[id].steps[k].estimates {
                    received.push(Received {
                        node: *id,
                        track: e.track,
                        est: e.to_estimate()?,
                    });
                }
            }
            let groups = match config.fusion.grouping {
                Grouping::All if received.is_empty() => Vec::new(),
                Grouping::All => vec![(0..received.len()).collect()],
                Grouping::MinDistance => associate_estimates(&received, threshold),
            };
            for stream in &mut per_method {
                let outputs = stage(
                    || format!("processing node {} ({})", proc.id, stream.method.key()),
                    run_processing_node(&groups, &received, &profiles, stream.method, config.fusion.objective),
                )?;
                stream.steps.push(FusedStep {
                    step: k,
                    time: config.step_time(k),
                    outputs,
                });
            }
        }
        fused.extend(per_method);
    }

    let mut embedded = config.clone();
    embedded.scenario.seed = seed;
    Ok(RunRecord {
        format: RECORD_FORMAT,
        seed,
        config: embedded,
        region,
        times: (0..config.steps()).map(|k| config.step_time(k)).collect(),
        truth,
        scans,
        nodes,
        baselines,
        fused,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn est(x: f64, y: f64) -> GaussianEstimate {
        GaussianEstimate::new(Vector::from_vec(vec![x, y, 0.0, 0.0]), Matrix::identity(4, 4) * 0.1).unwrap()
    }

    fn recv(node: NodeId, track: u64, x: f64, y: f64) -> Received {
        Received {
            node,
            track,
            est: est(x, y),
        }
    }

    #[test]
    fn coincident_estimates_form_one_group() {
        let r = [recv(1, 1, 0.0, 0.0), recv(2, 1, 0.0, 0.0)];
        assert_eq!(associate_estimates(&r, 1.0), vec![vec![0, 1]]);
    }

    #[test]
    fn distant_estimates_stay_single() {
        let r = [recv(1, 1, 0.0, 0.0), recv(2, 1, 5.0, 0.0), recv(3, 1, 0.0, 5.0)];
        assert_eq!(associate_estimates(&r, 1.0), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn same_node_estimates_never_share_a_group() {
        let r = [recv(1, 1, 0.0, 0.0), recv(1, 2, 0.1, 0.0), recv(2, 1, 0.05, 0.0)];
        let g = associate_estimates(&r, 1.0);
        assert_eq!(g.len(), 2);
        for group in &g {
            let nodes: Vec<NodeId> = group.iter().map(|i| r[*i].node).collect();
            let mut d = nodes.clone();
            d.dedup();
            assert_eq!(d.len(), nodes.len());
        }
    }

    #[test]
    fn complete_linkage_refuses_chains() {
        // 0–1 and 1–2 are within threshold but 0–2 is not.
        let r = [recv(1, 1, 0.0, 0.0), recv(2, 1, 0.8, 0.0), recv(3, 1, 1.7, 0.0)];
        let g = associate_estimates(&r, 1.0);
        assert_eq!(g, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn singletons_pass_through_flagged() {
        let r = [recv(4, 7, 1.0, 2.0)];
        let profiles = BTreeMap::new();
        let out = run_processing_node(&[vec![0]], &r, &profiles, FusionMethod::ModifiedCi, Objective::Trace).unwrap();
        assert_eq!(out.len(), 1);
        assert!(!out[0].fused);
        assert_eq!(out[0].key, "4:7");
        assert_eq!(out[0].to_estimate().unwrap(), r[0].est);
    }
}
