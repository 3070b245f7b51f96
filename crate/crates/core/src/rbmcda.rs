//! Tracking an unknown, time-varying number of targets.
//!
//! Extends the single-target filter with a birth event per measurement, a
//! gamma-lifetime death model evaluated once per scan, and a visibility
//! bookkeeping of target slots. Each particle holds the Kalman posteriors of
//! its visible targets; invisible slots sit at the birth prior and are not
//! stored.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};

use crate::error::{Error, Result};
use crate::gaussian::{kf_likelihood, kf_predict, kf_update, GaussianEstimate, MeasurementModel, MotionModel};
use crate::linalg::Vector;
use crate::rbpf::{
    effective_prior, mixture_moments, normalize_weights, resample_items, sample_index,
    AssociationHistory, AssociationPosterior, AssociationPrior, ClutterModel, Proposal, CLUTTER,
};
use crate::rng::{derive_seed, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathModel {
    /// Probability that a measurement originates from a newborn target.
    pub p_birth: f64,
    /// Gamma lifetime shape α.
    pub lifetime_shape: f64,
    /// Gamma lifetime scale β (mean lifetime αβ).
    pub lifetime_scale: f64,
    /// Cap on simultaneously visible targets.
    pub max_targets: usize,
}

impl Default for BirthDeathModel {
    fn default() -> Self {
        Self {
            p_birth: 0.01,
            lifetime_shape: 2.0,
            lifetime_scale: 0.5,
            max_targets: 20,
        }
    }
}

impl BirthDeathModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_birth) {
            return Err(Error::param("p_birth", format!("must lie in [0, 1], got {}", self.p_birth)));
        }
        if !(self.lifetime_shape > 0.0) || !(self.lifetime_scale > 0.0) {
            return Err(Error::param("lifetime", "shape and scale must be positive"));
        }
        if self.max_targets == 0 {
            return Err(Error::param("max_targets", "must be at least 1"));
        }
        Ok(())
    }

    fn lifetime(&self) -> Gamma {
        Gamma::new(self.lifetime_shape, 1.0 / self.lifetime_scale)
            .expect("validated gamma parameters")
    }
}

/// A joint (birth, association) event with its prior probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEvent {
    pub birth: bool,
    /// `0` is clutter, `1..=T` existing targets, `T + 1` the newborn.
    pub association: usize,
    pub probability: f64,
}

/// Joint prior over (birth, association) given the history and the current
/// number of visible targets: `p_b` on (birth, T+1) and
/// `(1 − p_b) · P(c = j | history)` on (no birth, j). At the target cap the
/// birth branch is dropped and the rest renormalized.
pub fn birth_assoc_prior(
    history: &AssociationHistory,
    n_targets: usize,
    model: &BirthDeathModel,
    assoc_prior: &AssociationPrior,
) -> Vec<JointEvent> {
    let p_birth = if n_targets < model.max_targets { model.p_birth } else { 0.0 };
    let mut events: Vec<JointEvent> = assoc_prior
        .probabilities(history, n_targets)
        .into_iter()
        .enumerate()
        .map(|(j, p)| JointEvent {
            birth: false,
            association: j,
            probability: (1.0 - p_birth) * p,
        })
        .collect();
    if n_targets < model.max_targets {
        events.push(JointEvent {
            birth: true,
            association: n_targets + 1,
            probability: p_birth,
        });
    }
    events
}

/// Probability that a target whose last association was at `tau_last` and
/// which was alive at `t_prev` dies by `t_now`:
/// `P(t_d ∈ [t_prev − τ, t_now − τ] | t_d ≥ t_prev − τ)` under the gamma
/// lifetime.
pub fn death_probability(t_now: f64, t_prev: f64, tau_last: f64, model: &BirthDeathModel) -> f64 {
    if t_now <= t_prev {
        return 0.0;
    }
    let lifetime = model.lifetime();
    let from = (t_prev - tau_last).max(0.0);
    let to = (t_now - tau_last).max(0.0);
    let survive_from = lifetime.sf(from);
    if survive_from <= 0.0 {
        return 1.0;
    }
    (1.0 - lifetime.sf(to) / survive_from).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub id: u64,
    pub est: GaussianEstimate,
    /// Time of the last measurement associated with this target.
    pub last_assoc_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTargetParticle {
    pub history: AssociationHistory,
    /// Visible targets in slot order; association `j` refers to `targets[j - 1]`.
    pub targets: Vec<Target>,
    pub weight: f64,
}

impl MultiTargetParticle {
    pub fn target_count(&self) -> usize {
        self.targets.len()
    }

    /// Visibility indicator over `max_targets` slots; visible slots first.
    pub fn visibility(&self, max_targets: usize) -> Vec<bool> {
        (0..max_targets.max(self.targets.len()))
            .map(|i| i < self.targets.len())
            .collect()
    }

    pub fn check_invariants(&self) -> bool {
        let mut ids: Vec<u64> = self.targets.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len() == self.targets.len()
            && self.weight.is_finite()
            && self.targets.iter().all(|t| t.last_assoc_time.is_finite())
    }
}

/// Particle set with the time of its last scan and the id counter shared by
/// all particles.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiTargetSet {
    pub particles: Vec<MultiTargetParticle>,
    pub time: f64,
    pub next_id: u64,
}

impl MultiTargetSet {
    /// `n` particles, no visible targets, at time `t0`.
    pub fn empty(n: usize, order: usize, t0: f64) -> Result<Self> {
        Self::with_targets(Vec::new(), n, order, t0)
    }

    /// `n` identical particles sharing the given pre-born targets.
    pub fn with_targets(targets: Vec<GaussianEstimate>, n: usize, order: usize, t0: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        let targets: Vec<Target> = targets
            .into_iter()
            .enumerate()
            .map(|(i, est)| Target {
                id: i as u64 + 1,
                est,
                last_assoc_time: t0,
            })
            .collect();
        let next_id = targets.len() as u64 + 1;
        let p = MultiTargetParticle {
            history: AssociationHistory::new(order),
            targets,
            weight: 1.0 / n as f64,
        };
        Ok(Self {
            particles: vec![p; n],
            time: t0,
            next_id,
        })
    }

    pub fn normalize(&mut self) -> Result<()> {
        normalize_weights(&mut self.particles, |p| &mut p.weight)
    }

    pub fn best_particle(&self) -> Option<&MultiTargetParticle> {
        // First maximum wins on ties.
        self.particles
            .iter()
            .fold(None, |best: Option<&MultiTargetParticle>, p| match best {
                Some(b) if b.weight >= p.weight => Some(b),
                _ => Some(p),
            })
    }
}

/// Removes each visible target independently with its death probability.
/// Survivors keep their relative order; the association history is remapped
/// so that references to dead targets become clutter.
pub fn apply_deaths(
    mut particle: MultiTargetParticle,
    t_now: f64,
    t_prev: f64,
    model: &BirthDeathModel,
    rng_seed: u64,
) -> MultiTargetParticle {
    if particle.targets.is_empty() {
        return particle;
    }
    let mut rng = stream_rng(rng_seed, 0);
    let alive: Vec<bool> = particle
        .targets
        .iter()
        .map(|t| {
            let p = death_probability(t_now, t_prev, t.last_assoc_time, model);
            rng.random::<f64>() >= p
        })
        .collect();
    if alive.iter().all(|a| *a) {
        return particle;
    }
    let mut new_index = vec![None; alive.len()];
    let mut next = 0;
    for (i, a) in alive.iter().enumerate() {
        if *a {
            next += 1;
            new_index[i] = Some(next);
        }
    }
    particle.history.remap(|c| new_index[c - 1]);
    let mut keep = alive.into_iter();
    particle.targets.retain(|_| keep.next().unwrap_or(false));
    particle
}

/// Models used by one multi-target filter.
#[derive(Debug, Clone)]
pub struct MultiTargetModels {
    pub motion: MotionModel,
    pub meas: MeasurementModel,
    pub clutter: ClutterModel,
    pub birth_death: BirthDeathModel,
    pub assoc_prior: AssociationPrior,
    /// Prior of a newborn target before its first measurement.
    pub birth_prior: GaussianEstimate,
    pub proposal: Proposal,
}

/// Predicts every visible target to `t_now` and samples deaths. A no-op
/// when `t_now` does not exceed the set's time.
pub fn rbmcda_advance(
    mut set: MultiTargetSet,
    t_now: f64,
    models: &MultiTargetModels,
    rng_seed: u64,
) -> Result<MultiTargetSet> {
    if t_now <= set.time {
        return Ok(set);
    }
    let t_prev = set.time;
    let particles = std::mem::take(&mut set.particles);
    set.particles = particles
        .into_iter()
        .enumerate()
        .map(|(i, mut p)| {
            for t in &mut p.targets {
                t.est = kf_predict(&t.est, &models.motion)?;
            }
            Ok(apply_deaths(p, t_now, t_prev, &models.birth_death, derive_seed(rng_seed, i as u64)))
        })
        .collect::<Result<_>>()?;
    set.time = t_now;
    Ok(set)
}

/// Samples a joint (birth, association) event for each particle and applies
/// the corresponding Kalman update; weights are multiplied by the
/// importance ratio and renormalized.
pub fn rbmcda_associate(
    mut set: MultiTargetSet,
    y: &Vector,
    models: &MultiTargetModels,
    rng_seed: u64,
) -> Result<MultiTargetSet> {
    let t_now = set.time;
    for (i, p) in set.particles.iter_mut().enumerate() {
        let n = p.targets.len();
        let events = birth_assoc_prior(&p.history, n, &models.birth_death, &models.assoc_prior);
        let mut prior: Vec<f64> = events.iter().map(|e| e.probability).collect();
        // Clutter removal applies to the no-birth block only.
        let no_birth_mass: f64 = prior[..=n].iter().sum();
        if no_birth_mass > 0.0 {
            let reshaped = effective_prior(prior[..=n].iter().map(|p| p / no_birth_mass).collect(), &models.clutter);
            for (dst, src) in prior[..=n].iter_mut().zip(reshaped) {
                *dst = src * no_birth_mass;
            }
        }
        let mut lik = Vec::with_capacity(events.len());
        lik.push(models.clutter.density());
        for t in &p.targets {
            lik.push(kf_likelihood(&t.est, y, &models.meas)?);
        }
        if events.len() > n + 1 {
            lik.push(kf_likelihood(&models.birth_prior, y, &models.meas)?);
        }
        let post = AssociationPosterior::from_terms(lik, prior)?;
        let mut rng = stream_rng(rng_seed, i as u64);
        let k = sample_index(post.proposal(models.proposal), rng.random::<f64>());
        p.weight *= post.weight_factor(k, models.proposal);
        let event = events[k];
        if event.birth {
            let est = kf_update(&models.birth_prior, y, &models.meas)?;
            p.targets.push(Target {
                id: set.next_id,
                est,
                last_assoc_time: t_now,
            });
            set.next_id += 1;
        } else if event.association != CLUTTER {
            let t = &mut p.targets[event.association - 1];
            t.est = kf_update(&t.est, y, &models.meas)?;
            t.last_assoc_time = t_now;
        }
        p.history.push(event.association);
    }
    set.normalize()?;
    Ok(set)
}

/// Full step for one measurement at `t_now`: advance (if time moved),
/// associate, and resample when the effective sample size drops below
/// `resample_threshold · N`.
pub fn rbmcda_step(
    set: MultiTargetSet,
    y: &Vector,
    t_now: f64,
    models: &MultiTargetModels,
    resample_threshold: f64,
    rng_seed: u64,
) -> Result<MultiTargetSet> {
    let set = rbmcda_advance(set, t_now, models, derive_seed(rng_seed, 1))?;
    let mut set = rbmcda_associate(set, y, models, derive_seed(rng_seed, 2))?;
    set.particles = resample_items(set.particles, resample_threshold, derive_seed(rng_seed, 3), |p| {
        &mut p.weight
    });
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountEstimator {
    /// Target count of the highest-weight particle.
    #[default]
    HighestWeight,
    /// Count with the largest total particle weight.
    WeightedMode,
}

/// Per-step output of the multi-target filter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackSnapshot {
    pub step: usize,
    pub time: f64,
    pub count: usize,
    /// Targets of the highest-weight particle, each moment-matched over all
    /// particles that carry the same id.
    pub targets: Vec<(u64, GaussianEstimate)>,
}

pub fn snapshot(set: &MultiTargetSet, step: usize, estimator: CountEstimator) -> TrackSnapshot {
    let Some(best) = set.best_particle() else {
        return TrackSnapshot {
            step,
            time: set.time,
            count: 0,
            targets: Vec::new(),
        };
    };
    let count = match estimator {
        CountEstimator::HighestWeight => best.target_count(),
        CountEstimator::WeightedMode => {
            let mut mass: BTreeMap<usize, f64> = BTreeMap::new();
            for p in &set.particles {
                *mass.entry(p.target_count()).or_default() += p.weight;
            }
            mass.into_iter()
                .fold((0, f64::NEG_INFINITY), |acc, (k, m)| if m > acc.1 { (k, m) } else { acc })
                .0
        }
    };
    let targets = best
        .targets
        .iter()
        .map(|t| {
            let carriers = set.particles.iter().filter_map(|p| {
                p.targets.iter().find(|o| o.id == t.id).map(|o| (p.weight, &o.est))
            });
            let est = mixture_moments(carriers).unwrap_or_else(|| t.est.clone());
            (t.id, est)
        })
        .collect();
    TrackSnapshot {
        step,
        time: set.time,
        count,
        targets,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackPoint {
    pub step: usize,
    pub time: f64,
    pub est: GaussianEstimate,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: BTreeMap<u64, Vec<TrackPoint>>,
    pub counts: Vec<usize>,
}

/// Regroups per-step snapshots into per-id streams plus the count signal.
pub fn extract_tracks(history: &[TrackSnapshot]) -> TrackSet {
    let mut out = TrackSet::default();
    for snap in history {
        out.counts.push(snap.count);
        for (id, est) in &snap.targets {
            out.tracks.entry(*id).or_default().push(TrackPoint {
                step: snap.step,
                time: snap.time,
                est: est.clone(),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmcdaConfig {
    pub n_particles: usize,
    pub order: usize,
    pub resample_threshold: f64,
    pub count_estimator: CountEstimator,
}

impl Default for RbmcdaConfig {
    fn default() -> Self {
        Self {
            n_particles: 20,
            order: 1,
            resample_threshold: 0.5,
            count_estimator: CountEstimator::HighestWeight,
        }
    }
}

/// Scan-by-scan driver that records a snapshot after every scan.
#[derive(Debug, Clone)]
pub struct RbmcdaTracker {
    set: MultiTargetSet,
    models: MultiTargetModels,
    config: RbmcdaConfig,
    seed: u64,
    draws: u64,
    history: Vec<TrackSnapshot>,
}

impl RbmcdaTracker {
    pub fn new(
        set: MultiTargetSet,
        models: MultiTargetModels,
        config: RbmcdaConfig,
        seed: u64,
    ) -> Result<Self> {
        models.birth_death.validate()?;
        models.assoc_prior.validate()?;
        Ok(Self {
            set,
            models,
            config,
            seed,
            draws: 0,
            history: Vec::new(),
        })
    }

    fn next_seed(&mut self) -> u64 {
        self.draws += 1;
        derive_seed(self.seed, self.draws)
    }

    pub fn set(&self) -> &MultiTargetSet {
        &self.set
    }

    pub fn history(&self) -> &[TrackSnapshot] {
        &self.history
    }

    /// Advances to `time`, assimilates the scan, and records a snapshot.
    pub fn process_scan(&mut self, time: f64, measurements: &[Vector]) -> Result<&TrackSnapshot> {
        let seed = self.next_seed();
        let mut set = std::mem::replace(
            &mut self.set,
            MultiTargetSet {
                particles: Vec::new(),
                time,
                next_id: 0,
            },
        );
        set = rbmcda_advance(set, time, &self.models, seed)?;
        for y in measurements {
            let seed = self.next_seed();
            set = rbmcda_associate(set, y, &self.models, seed)?;
            let seed = self.next_seed();
            set.particles = resample_items(set.particles, self.config.resample_threshold, seed, |p| {
                &mut p.weight
            });
        }
        debug_assert!(set.particles.iter().all(|p| p.check_invariants()));
        self.set = set;
        let step = self.history.len();
        self.history.push(snapshot(&self.set, step, self.config.count_estimator));
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn tracks(&self) -> TrackSet {
        extract_tracks(&self.history)
    }
}
