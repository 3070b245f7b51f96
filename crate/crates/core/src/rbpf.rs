//! Single-target detection and tracking in clutter with a Rao-Blackwellized
//! particle filter.
//!
//! Each particle carries a sampled association history and the Kalman
//! posterior of the target conditioned on it. Associations are drawn from
//! the optimal importance distribution over {clutter, target}; the Gaussian
//! part is handled exactly.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{kf_likelihood, kf_predict, kf_update, GaussianEstimate, MeasurementModel, MotionModel};
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::rng::{derive_seed, stream_rng};

/// Association index of the clutter hypothesis.
pub const CLUTTER: usize = 0;

/// The last `order` association indicators of a particle, oldest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssociationHistory {
    order: usize,
    entries: VecDeque<usize>,
}

impl AssociationHistory {
    pub fn new(order: usize) -> Self {
        Self {
            order,
            entries: VecDeque::with_capacity(order),
        }
    }

    pub fn push(&mut self, c: usize) {
        if self.order == 0 {
            return;
        }
        if self.entries.len() == self.order {
            self.entries.pop_front();
        }
        self.entries.push_back(c);
    }

    pub fn last(&self) -> Option<usize> {
        self.entries.back().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().copied()
    }

    /// Remaps target indices after slot reordering; `None` drops to clutter.
    pub(crate) fn remap(&mut self, f: impl Fn(usize) -> Option<usize>) {
        for c in self.entries.iter_mut() {
            if *c != CLUTTER {
                *c = f(*c).unwrap_or(CLUTTER);
            }
        }
    }
}

/// Prior `P(c_k = j | c_{k-m:k-1})` over clutter (`j = 0`) and the visible
/// targets `1..=T`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AssociationPrior {
    /// Equal mass on clutter and every visible target.
    #[default]
    Uniform,
    /// Fixed clutter mass; the rest split evenly over visible targets.
    Clutter { p_clutter: f64 },
    /// First-order chain over {clutter, target}. Target mass is split evenly
    /// when several targets are visible.
    Markov {
        initial: [f64; 2],
        transition: [[f64; 2]; 2],
    },
}

impl AssociationPrior {
    pub fn validate(&self) -> Result<()> {
        let row_ok = |r: &[f64; 2]| {
            r.iter().all(|p| (0.0..=1.0).contains(p)) && ((r[0] + r[1]) - 1.0).abs() <= 1e-9
        };
        match self {
            AssociationPrior::Uniform => Ok(()),
            AssociationPrior::Clutter { p_clutter } if (0.0..=1.0).contains(p_clutter) => Ok(()),
            AssociationPrior::Clutter { p_clutter } => Err(Error::param(
                "p_clutter",
                format!("must lie in [0, 1], got {p_clutter}"),
            )),
            AssociationPrior::Markov { initial, transition } => {
                if row_ok(initial) && transition.iter().all(row_ok) {
                    Ok(())
                } else {
                    Err(Error::param("association prior", "rows must be distributions"))
                }
            }
        }
    }

    /// Probabilities over `0..=n_targets`; always sums to one.
    pub fn probabilities(&self, history: &AssociationHistory, n_targets: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_targets + 1];
        if n_targets == 0 {
            out[CLUTTER] = 1.0;
            return out;
        }
        let p_clutter = match self {
            AssociationPrior::Uniform => 1.0 / (n_targets + 1) as f64,
            AssociationPrior::Clutter { p_clutter } => *p_clutter,
            AssociationPrior::Markov { initial, transition } => match history.last() {
                None => initial[0],
                Some(CLUTTER) => transition[0][0],
                Some(_) => transition[1][0],
            },
        };
        out[CLUTTER] = p_clutter;
        let each = (1.0 - p_clutter) / n_targets as f64;
        for p in out.iter_mut().skip(1) {
            *p = each;
        }
        out
    }
}

/// Uniform clutter over a measurement region of volume `volume`, with
/// `clutter_rate` expected false measurements per scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClutterModel {
    pub volume: f64,
    pub clutter_rate: f64,
}

impl ClutterModel {
    pub fn new(volume: f64, clutter_rate: f64) -> Result<Self> {
        if !(volume > 0.0) || !volume.is_finite() {
            return Err(Error::param("volume", format!("must be positive, got {volume}")));
        }
        if !(clutter_rate >= 0.0) {
            return Err(Error::param(
                "clutter_rate",
                format!("must be non-negative, got {clutter_rate}"),
            ));
        }
        Ok(Self {
            volume,
            clutter_rate,
        })
    }

    /// `P(y | c = 0) = 1 / V`.
    pub fn density(&self) -> f64 {
        1.0 / self.volume
    }

    /// With a zero clutter rate no measurement can be clutter.
    pub fn admits_clutter(&self) -> bool {
        self.clutter_rate > 0.0
    }
}

/// Proposal used to draw associations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proposal {
    /// `P(c | y, history)`: the posterior over associations.
    #[default]
    Optimal,
    /// `P(c | history)`: the association prior alone.
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub history: AssociationHistory,
    pub est: GaussianEstimate,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
    pub order: usize,
}

impl ParticleSet {
    /// `n` identical particles with uniform weights.
    pub fn new(initial: GaussianEstimate, n: usize, order: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        let p = Particle {
            history: AssociationHistory::new(order),
            est: initial,
            weight: 1.0 / n as f64,
        };
        Ok(Self {
            particles: vec![p; n],
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn normalize(&mut self) -> Result<()> {
        normalize_weights(&mut self.particles, |p| &mut p.weight)
    }
}

pub(crate) fn normalize_weights<T>(items: &mut [T], weight: impl Fn(&mut T) -> &mut f64) -> Result<()> {
    let total: f64 = items.iter_mut().map(|p| *weight(p)).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::WeightUnderflow);
    }
    for p in items.iter_mut() {
        *weight(p) /= total;
    }
    Ok(())
}

/// Unnormalized association terms `P(y | c = j) · P(c = j | history)`,
/// their sum, and the normalized posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationPosterior {
    pub likelihoods: Vec<f64>,
    pub prior: Vec<f64>,
    pub posterior: Vec<f64>,
    pub evidence: f64,
}

impl AssociationPosterior {
    pub fn from_terms(likelihoods: Vec<f64>, prior: Vec<f64>) -> Result<Self> {
        let joint: Vec<f64> = likelihoods.iter().zip(&prior).map(|(l, p)| l * p).collect();
        let evidence: f64 = joint.iter().sum();
        if !(evidence > 0.0) || !evidence.is_finite() {
            return Err(Error::DegenerateLikelihood);
        }
        let posterior = joint.iter().map(|j| j / evidence).collect();
        Ok(Self {
            likelihoods,
            prior,
            posterior,
            evidence,
        })
    }

    /// Incremental weight `P(y | c) P(c | hist) / q(c)` for a draw `c` from `proposal`.
    pub fn weight_factor(&self, c: usize, proposal: Proposal) -> f64 {
        match proposal {
            Proposal::Optimal => {
                let q = self.posterior[c];
                self.likelihoods[c] * self.prior[c] / q
            }
            Proposal::Prior => self.likelihoods[c],
        }
    }

    pub fn proposal(&self, proposal: Proposal) -> &[f64] {
        match proposal {
            Proposal::Optimal => &self.posterior,
            Proposal::Prior => &self.prior,
        }
    }
}

/// Clutter prior mass is removed (and the rest renormalized) when the
/// clutter model admits no clutter.
pub(crate) fn effective_prior(mut prior: Vec<f64>, clutter: &ClutterModel) -> Vec<f64> {
    if !clutter.admits_clutter() && prior.len() > 1 {
        prior[CLUTTER] = 0.0;
        let total: f64 = prior.iter().sum();
        if total > 0.0 {
            prior.iter_mut().for_each(|p| *p /= total);
        }
    }
    prior
}

/// Posterior `(π₀, π₁)` of clutter vs. target for a particle holding the
/// predicted Gaussian.
pub fn association_posterior(
    particle: &Particle,
    y: &Vector,
    meas: &MeasurementModel,
    clutter: &ClutterModel,
    prior: &AssociationPrior,
) -> Result<(f64, f64)> {
    let post = particle_posterior(particle, y, meas, clutter, prior)?;
    Ok((post.posterior[0], post.posterior[1]))
}

fn particle_posterior(
    particle: &Particle,
    y: &Vector,
    meas: &MeasurementModel,
    clutter: &ClutterModel,
    prior: &AssociationPrior,
) -> Result<AssociationPosterior> {
    let lik = vec![clutter.density(), kf_likelihood(&particle.est, y, meas)?];
    let prior = effective_prior(prior.probabilities(&particle.history, 1), clutter);
    AssociationPosterior::from_terms(lik, prior)
}

/// Draws an index from a discrete distribution with one uniform variate.
pub(crate) fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc && *p > 0.0 {
            return i;
        }
    }
    last_positive
}

/// Kalman prediction of every particle.
pub fn rbpf_predict(mut set: ParticleSet, motion: &MotionModel) -> Result<ParticleSet> {
    for p in &mut set.particles {
        p.est = kf_predict(&p.est, motion)?;
    }
    Ok(set)
}

/// Samples an association for every particle, reweights, applies the Kalman
/// update on target associations, and renormalizes. Particles must hold
/// predicted Gaussians.
pub fn rbpf_associate(
    mut set: ParticleSet,
    y: &Vector,
    meas: &MeasurementModel,
    clutter: &ClutterModel,
    prior: &AssociationPrior,
    proposal: Proposal,
    rng_seed: u64,
) -> Result<ParticleSet> {
    for (i, p) in set.particles.iter_mut().enumerate() {
        let post = particle_posterior(p, y, meas, clutter, prior)?;
        let mut rng = stream_rng(rng_seed, i as u64);
        let c = sample_index(post.proposal(proposal), rng.random::<f64>());
        p.weight *= post.weight_factor(c, proposal);
        if c != CLUTTER {
            p.est = kf_update(&p.est, y, meas)?;
        }
        p.history.push(c);
    }
    set.normalize()?;
    Ok(set)
}

/// One full filter step for a measurement arriving after `motion`'s interval.
pub fn rbpf_step(
    set: ParticleSet,
    y: &Vector,
    motion: &MotionModel,
    meas: &MeasurementModel,
    clutter: &ClutterModel,
    prior: &AssociationPrior,
    rng_seed: u64,
) -> Result<ParticleSet> {
    let set = rbpf_predict(set, motion)?;
    rbpf_associate(set, y, meas, clutter, prior, Proposal::Optimal, rng_seed)
}

/// `1 / Σ wᵢ²`
pub fn effective_sample_size(set: &ParticleSet) -> f64 {
    ess_of(set.particles.iter().map(|p| p.weight))
}

pub(crate) fn ess_of(weights: impl Iterator<Item = f64>) -> f64 {
    1.0 / weights.map(|w| w * w).sum::<f64>()
}

/// Systematic resampling indices for normalized `weights` and an offset
/// `u ∈ [0, 1)` (in units of one stratum).
pub fn systematic_indices(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0;
    for i in 0..n {
        let point = (i as f64 + u) / n as f64;
        while point >= cumulative && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

/// Systematic resampling when `ESS < threshold_fraction · N`; otherwise
/// the set is returned unchanged.
pub fn resample(set: ParticleSet, threshold_fraction: f64, rng_seed: u64) -> ParticleSet {
    let order = set.order;
    let particles = resample_items(set.particles, threshold_fraction, rng_seed, |p| &mut p.weight);
    ParticleSet { particles, order }
}

pub(crate) fn resample_items<T: Clone>(
    mut items: Vec<T>,
    threshold_fraction: f64,
    rng_seed: u64,
    weight: impl Fn(&mut T) -> &mut f64,
) -> Vec<T> {
    let n = items.len();
    let weights: Vec<f64> = items.iter_mut().map(|p| *weight(p)).collect();
    if ess_of(weights.iter().copied()) >= threshold_fraction * n as f64 {
        return items;
    }
    let u = stream_rng(rng_seed, u64::MAX).random::<f64>();
    systematic_indices(&weights, u)
        .into_iter()
        .map(|i| {
            let mut p = items[i].clone();
            *weight(&mut p) = 1.0 / n as f64;
            p
        })
        .collect()
}

/// Moment-matched Gaussian of a weighted mixture.
pub fn mixture_moments<'a>(
    components: impl Iterator<Item = (f64, &'a GaussianEstimate)> + Clone,
) -> Option<GaussianEstimate> {
    let total: f64 = components.clone().map(|(w, _)| w).sum();
    if !(total > 0.0) {
        return None;
    }
    let (_, first) = components.clone().next()?;
    let n = first.dim();
    let mut mean = Vector::zeros(n);
    for (w, e) in components.clone() {
        mean += &e.mean * (w / total);
    }
    let mut cov = Matrix::zeros(n, n);
    for (w, e) in components {
        let d = &e.mean - &mean;
        cov += (&e.cov + &d * d.transpose()) * (w / total);
    }
    Some(GaussianEstimate {
        mean,
        cov: symmetrize(&cov),
    })
}

/// Moment-matched point estimate of the particle mixture.
pub fn point_estimate(set: &ParticleSet) -> GaussianEstimate {
    mixture_moments(set.particles.iter().map(|p| (p.weight, &p.est)))
        .expect("particle set has positive total weight")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbpfConfig {
    pub n_particles: usize,
    pub order: usize,
    /// Resample when `ESS < resample_threshold · N`. Zero disables resampling.
    pub resample_threshold: f64,
    pub proposal: Proposal,
}

impl Default for RbpfConfig {
    fn default() -> Self {
        Self {
            n_particles: 20,
            order: 1,
            resample_threshold: 0.5,
            proposal: Proposal::Optimal,
        }
    }
}

/// Scan-by-scan driver: one prediction per scan, then one association step
/// per measurement in the scan.
#[derive(Debug, Clone)]
pub struct RbpfTracker {
    set: ParticleSet,
    motion: MotionModel,
    meas: MeasurementModel,
    clutter: ClutterModel,
    prior: AssociationPrior,
    config: RbpfConfig,
    seed: u64,
    draws: u64,
}

impl RbpfTracker {
    pub fn new(
        initial: GaussianEstimate,
        motion: MotionModel,
        meas: MeasurementModel,
        clutter: ClutterModel,
        prior: AssociationPrior,
        config: RbpfConfig,
        seed: u64,
    ) -> Result<Self> {
        prior.validate()?;
        let set = ParticleSet::new(initial, config.n_particles, config.order)?;
        Ok(Self {
            set,
            motion,
            meas,
            clutter,
            prior,
            config,
            seed,
            draws: 0,
        })
    }

    pub fn particles(&self) -> &ParticleSet {
        &self.set
    }

    fn next_seed(&mut self) -> u64 {
        self.draws += 1;
        derive_seed(self.seed, self.draws)
    }

    /// Advances one scan interval and assimilates the scan's measurements.
    pub fn process_scan(&mut self, measurements: &[Vector]) -> Result<GaussianEstimate> {
        let set = std::mem::replace(&mut self.set, ParticleSet { particles: Vec::new(), order: 0 });
        let mut set = rbpf_predict(set, &self.motion)?;
        for y in measurements {
            let s = self.next_seed();
            set = rbpf_associate(set, y, &self.meas, &self.clutter, &self.prior, self.config.proposal, s)?;
            let s = self.next_seed();
            set = resample(set, self.config.resample_threshold, s);
        }
        self.set = set;
        Ok(point_estimate(&self.set))
    }

    pub fn estimate(&self) -> GaussianEstimate {
        point_estimate(&self.set)
    }
}
