//! Track-to-track fusion of Gaussian estimates with unknown cross-correlation.
//!
//! Covers pairwise covariance intersection (CI), its batch form (BCI), and
//! the detection-aware variants that pre-scale each input precision by a
//! factor derived from the nodes' detection probabilities and covariance
//! growth parameters. Mixing weights minimize the trace of the fused
//! covariance unless another [`Objective`] is requested.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianEstimate;
use crate::linalg::{self, Matrix, Vector};

/// Detection characteristics of a monitoring node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeProfile {
    pub p_detect: f64,
    /// Growth parameter χ in (0, 1]; χ⁻¹ is the covariance growth over a
    /// missed detection.
    pub chi: f64,
    #[serde(default)]
    pub clutter_density: f64,
}

impl NodeProfile {
    pub fn new(p_detect: f64, chi: f64, clutter_density: f64) -> Result<Self> {
        let p = Self {
            p_detect,
            chi,
            clutter_density,
        };
        p.validate()?;
        Ok(p)
    }

    /// Profile with χ⁻¹ = 1 + dt.
    pub fn with_step(p_detect: f64, dt: f64, clutter_density: f64) -> Result<Self> {
        Self::new(p_detect, 1.0 / (1.0 + dt), clutter_density)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p_detect) {
            return Err(Error::param("p_detect", format!("must lie in [0, 1], got {}", self.p_detect)));
        }
        if !(self.chi > 0.0 && self.chi <= 1.0) {
            return Err(Error::param("chi", format!("must lie in (0, 1], got {}", self.chi)));
        }
        if !(self.clutter_density >= 0.0) {
            return Err(Error::param("clutter_density", "must be nonnegative"));
        }
        Ok(())
    }

    /// Expected scale of this node's precision when it is the only one
    /// deciding: `p + (1 − p)χ`, written so that χ = 1 gives exactly 1.
    fn expected_gain(&self) -> f64 {
        1.0 - (1.0 - self.p_detect) * (1.0 - self.chi)
    }
}

/// Convex mixing weights on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixingWeights {
    omega: Vec<f64>,
}

impl MixingWeights {
    pub fn new(omega: Vec<f64>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::InvalidWeights("empty weight vector".into()));
        }
        if let Some(w) = omega.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidWeights(format!("weight {w} outside [0, 1]")));
        }
        let sum: f64 = omega.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}")));
        }
        Ok(Self { omega })
    }

    /// `(ω, 1 − ω)`.
    pub fn pair(omega: f64) -> Result<Self> {
        Self::new(vec![omega, 1.0 - omega])
    }

    pub fn centroid(n: usize) -> Self {
        Self {
            omega: vec![1.0 / n as f64; n],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.omega
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }
}

/// Norm of the fused covariance that the mixing weights minimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    Trace,
    /// Log-determinant of the fused covariance.
    Determinant,
}

/// Inverse of an estimate's covariance.
pub fn precision(est: &GaussianEstimate) -> Result<Matrix> {
    linalg::strict_spd_inverse(&est.cov, "input covariance")
}

/// Objective value of a fused precision; `+∞` when it is not positive definite.
pub fn fused_objective(fused_precision: &Matrix, objective: Objective) -> f64 {
    let Some(chol) = fused_precision.clone().cholesky() else {
        return f64::INFINITY;
    };
    match objective {
        Objective::Trace => chol.inverse().trace(),
        Objective::Determinant => -2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
    }
}

fn weighted_sum(precisions: &[Matrix], omega: &[f64]) -> Matrix {
    let n = precisions[0].nrows();
    precisions
        .iter()
        .zip(omega)
        .fold(Matrix::zeros(n, n), |acc, (p, w)| acc + p * *w)
}

/// Fuses means with the given precisions and weights:
/// `P⁻¹ = Σ ωᵢ Πᵢ`, `m = P Σ ωᵢ Πᵢ mᵢ`.
fn fuse_precisions(means: &[&Vector], precisions: &[Matrix], omega: &[f64]) -> Result<GaussianEstimate> {
    let info = weighted_sum(precisions, omega);
    let cov = linalg::spd_inverse(&info, "fused precision")?;
    let n = info.nrows();
    let eta = means
        .iter()
        .zip(precisions)
        .zip(omega)
        .fold(Vector::zeros(n), |acc, ((m, p), w)| acc + (p * *m) * *w);
    GaussianEstimate::new(&cov * eta, cov)
}

fn check_inputs(inputs: &[&GaussianEstimate], min: usize) -> Result<()> {
    if inputs.len() < min {
        return Err(Error::param("inputs", format!("need at least {min} estimates, got {}", inputs.len())));
    }
    let n = inputs[0].dim();
    for e in inputs {
        if e.dim() != n {
            return Err(Error::dims("fusion inputs", n, e.dim()));
        }
    }
    Ok(())
}

/// Traditional covariance intersection with fixed weights `(ω, 1 − ω)`.
pub fn ci_fuse(a: &GaussianEstimate, b: &GaussianEstimate, w: &MixingWeights) -> Result<GaussianEstimate> {
    if w.len() != 2 {
        return Err(Error::InvalidWeights(format!("pairwise fusion needs 2 weights, got {}", w.len())));
    }
    bci_fuse(&[a.clone(), b.clone()], w)
}

/// Batch covariance intersection with fixed weights.
pub fn bci_fuse(inputs: &[GaussianEstimate], w: &MixingWeights) -> Result<GaussianEstimate> {
    let refs: Vec<&GaussianEstimate> = inputs.iter().collect();
    check_inputs(&refs, 2)?;
    if w.len() != inputs.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} inputs",
            w.len(),
            inputs.len()
        )));
    }
    let precisions = inputs.iter().map(precision).collect::<Result<Vec<_>>>()?;
    if let Some(i) = w.as_slice().iter().position(|x| *x == 1.0) {
        return Ok(inputs[i].clone());
    }
    let means: Vec<&Vector> = inputs.iter().map(|e| &e.mean).collect();
    fuse_precisions(&means, &precisions, w.as_slice())
}

const GRID_POINTS: usize = 64;
const GOLDEN_TOL: f64 = 1e-12;

fn is_tie(candidate: f64, best: f64) -> bool {
    candidate <= best + 1e-12 * best.abs().max(f64::MIN_POSITIVE)
}

/// Weight ω on `pa` minimizing the trace of `(ω Πa + (1 − ω) Πb)⁻¹`.
pub fn optimize_omega_pair(pa: &Matrix, pb: &Matrix) -> f64 {
    optimize_omega_pair_with(pa, pb, Objective::Trace)
}

/// Grid search over [0, 1] refined by golden-section search around the
/// best grid point. Ties go to 0.5.
pub fn optimize_omega_pair_with(pa: &Matrix, pb: &Matrix, objective: Objective) -> f64 {
    let f = |w: f64| fused_objective(&(pa * w + pb * (1.0 - w)), objective);
    let last = (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| f(i as f64 / last)).collect();
    let k = grid
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < grid[best] { i } else { best });
    let mut lo = k.saturating_sub(1) as f64 / last;
    let mut hi = (k + 1).min(GRID_POINTS - 1) as f64 / last;

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > GOLDEN_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    let refined = 0.5 * (lo + hi);
    let mut best = (k as f64 / last, grid[k]);
    for w in [refined, 0.0, 1.0] {
        let v = f(w);
        if v < best.1 {
            best = (w, v);
        }
    }
    if is_tie(f(0.5), best.1) {
        0.5
    } else {
        best.0
    }
}

/// Precision scale factors of the detection-aware fusion, one per node:
/// `pᵢ + (1 − pᵢ) χᵢ ∏_{j≠i} (pⱼ + (1 − pⱼ) χⱼ)`. For two nodes this is
/// `p + (1 − p) χa (q + (1 − q) χb)` and its mirror.
pub fn modified_scale_factors(profiles: &[NodeProfile]) -> Vec<f64> {
    profiles
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let others: f64 = profiles
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, pj)| pj.expected_gain())
                .product();
            1.0 - (1.0 - pi.p_detect) * (1.0 - pi.chi * others)
        })
        .collect()
}

/// Scaled precisions `(P̂a⁻¹, P̂b⁻¹)` of two covariances.
pub fn modified_precisions(
    pa: &Matrix,
    pb: &Matrix,
    prof_a: &NodeProfile,
    prof_b: &NodeProfile,
) -> Result<(Matrix, Matrix)> {
    prof_a.validate()?;
    prof_b.validate()?;
    let f = modified_scale_factors(&[*prof_a, *prof_b]);
    let ia = linalg::strict_spd_inverse(pa, "input covariance")?;
    let ib = linalg::strict_spd_inverse(pb, "input covariance")?;
    Ok((ia * f[0], ib * f[1]))
}

/// Fusion result together with the weights that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Fused {
    pub estimate: GaussianEstimate,
    pub weights: MixingWeights,
}

fn fuse_optimized(
    inputs: &[&GaussianEstimate],
    scales: Option<&[f64]>,
    objective: Objective,
) -> Result<Fused> {
    check_inputs(inputs, 2)?;
    let mut precisions = inputs.iter().map(|e| precision(e)).collect::<Result<Vec<_>>>()?;
    if let Some(s) = scales {
        for (p, f) in precisions.iter_mut().zip(s) {
            *p *= *f;
        }
    }
    let weights = if precisions.len() == 2 {
        MixingWeights::pair(optimize_omega_pair_with(&precisions[0], &precisions[1], objective))?
    } else {
        optimize_omega_simplex_with(&precisions, objective)
    };
    let means: Vec<&Vector> = inputs.iter().map(|e| &e.mean).collect();
    let estimate = fuse_precisions(&means, &precisions, weights.as_slice())?;
    Ok(Fused { estimate, weights })
}

/// Covariance intersection with optimized weights; pairwise for two inputs,
/// batch otherwise.
pub fn ci_fuse_optimal(inputs: &[&GaussianEstimate], objective: Objective) -> Result<Fused> {
    fuse_optimized(inputs, None, objective)
}

/// Detection-aware fusion with optimized weights; pairwise for two inputs,
/// batch otherwise.
pub fn modified_fuse_optimal(
    inputs: &[(&GaussianEstimate, &NodeProfile)],
    objective: Objective,
) -> Result<Fused> {
    let profiles: Vec<NodeProfile> = inputs.iter().map(|(_, p)| **p).collect();
    for p in &profiles {
        p.validate()?;
    }
    let scales = modified_scale_factors(&profiles);
    let ests: Vec<&GaussianEstimate> = inputs.iter().map(|(e, _)| *e).collect();
    fuse_optimized(&ests, Some(&scales), objective)
}

/// Pairwise detection-aware CI: scaled precisions, weight optimized on the
/// scaled precisions, means fused with the scaled precisions.
pub fn modified_ci_fuse(
    a: &GaussianEstimate,
    b: &GaussianEstimate,
    prof_a: &NodeProfile,
    prof_b: &NodeProfile,
) -> Result<GaussianEstimate> {
    Ok(modified_fuse_optimal(&[(a, prof_a), (b, prof_b)], Objective::Trace)?.estimate)
}

/// Batch detection-aware CI over any number (≥ 2) of inputs.
pub fn mbci_fuse(inputs: &[(GaussianEstimate, NodeProfile)]) -> Result<GaussianEstimate> {
    let refs: Vec<(&GaussianEstimate, &NodeProfile)> = inputs.iter().map(|(e, p)| (e, p)).collect();
    Ok(modified_fuse_optimal(&refs, Objective::Trace)?.estimate)
}

/// Weights on the simplex minimizing the trace of `(Σ ωᵢ Πᵢ)⁻¹`.
pub fn optimize_omega_simplex(precisions: &[Matrix]) -> MixingWeights {
    optimize_omega_simplex_with(precisions, Objective::Trace)
}

const NM_MAX_EVALS: usize = 4000;
const FACE_DROP: f64 = 1e-3;

/// Nelder–Mead over softmax logits (last logit pinned at zero), started
/// from the centroid and from points near each vertex. Weights that end up
/// tiny are dropped and the search repeated on the remaining face.
pub fn optimize_omega_simplex_with(precisions: &[Matrix], objective: Objective) -> MixingWeights {
    let n = precisions.len();
    if n == 1 {
        return MixingWeights { omega: vec![1.0] };
    }
    let eval = |w: &[f64]| fused_objective(&weighted_sum(precisions, w), objective);
    let centroid = MixingWeights::centroid(n);
    let scale = precisions.iter().map(linalg::max_abs).fold(0.0, f64::max);
    if precisions
        .iter()
        .all(|p| linalg::max_abs(&(p - &precisions[0])) <= 1e-12 * scale)
    {
        return centroid;
    }

    let all: Vec<usize> = (0..n).collect();
    let mut starts = vec![centroid.omega.clone()];
    for k in 0..n {
        let mut w = vec![0.1 / (n - 1) as f64; n];
        w[k] = 0.9;
        starts.push(w);
    }
    let mut best = (centroid.omega.clone(), eval(&centroid.omega));
    for s in &starts {
        let cand = search_face(&all, s, &eval);
        if cand.1 < best.1 {
            best = cand;
        }
    }
    for k in 0..n {
        let mut v = vec![0.0; n];
        v[k] = 1.0;
        let f = eval(&v);
        if f < best.1 {
            best = (v, f);
        }
    }
    best = polish(best, &eval);
    if is_tie(eval(&centroid.omega), best.1) {
        return centroid;
    }
    MixingWeights { omega: best.0 }
}

fn polish(mut best: (Vec<f64>, f64), eval: &impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    loop {
        let active: Vec<usize> = (0..best.0.len()).filter(|i| best.0[*i] >= FACE_DROP).collect();
        let support = best.0.iter().filter(|w| **w > 0.0).count();
        if active.len() == support || active.is_empty() {
            return best;
        }
        let cand = search_face(&active, &best.0, eval);
        if cand.1 <= best.1 {
            best = cand;
        } else {
            return best;
        }
    }
}

/// Minimizes over the face spanned by `active`, starting from `start`
/// restricted and renormalized to that face.
fn search_face(active: &[usize], start: &[f64], eval: &impl Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let n = start.len();
    let embed = |w_face: &[f64]| {
        let mut w = vec![0.0; n];
        for (i, v) in active.iter().zip(w_face) {
            w[*i] = *v;
        }
        w
    };
    if active.len() == 1 {
        let w = embed(&[1.0]);
        let f = eval(&w);
        return (w, f);
    }
    let sub: Vec<f64> = active.iter().map(|i| start[*i].max(1e-12)).collect();
    let last = sub[sub.len() - 1];
    let x0: Vec<f64> = sub[..sub.len() - 1].iter().map(|w| (w / last).ln()).collect();
    let objective = |z: &[f64]| eval(&embed(&softmax_pinned(z)));
    let z = nelder_mead(&objective, &x0, 1.0);
    let w = embed(&softmax_pinned(&z));
    let f = eval(&w);
    (w, f)
}

/// Softmax of `[z, 0]`.
fn softmax_pinned(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(0.0, f64::max);
    let mut e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    e.push((-m).exp());
    let s: f64 = e.iter().sum();
    e.iter_mut().for_each(|v| *v /= s);
    e
}

fn nelder_mead(f: &impl Fn(&[f64]) -> f64, x0: &[f64], step: f64) -> Vec<f64> {
    let d = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(d + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..d {
        let mut x = x0.to_vec();
        x[i] += step;
        let v = f(&x);
        simplex.push((x, v));
    }
    let mut evals = d + 1;
    let point = |c: &[f64], x: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(x).map(|(ci, xi)| ci + t * (xi - ci)).collect()
    };
    while evals < NM_MAX_EVALS {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (fbest, fworst) = (simplex[0].1, simplex[d].1);
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if (fworst - fbest).abs() <= 1e-15 * fbest.abs() && size <= 1e-9 {
            break;
        }
        if (fworst - fbest).abs() <= 1e-15 * fbest.abs() && size > 50.0 {
            break;
        }
        let mut c = vec![0.0; d];
        for (x, _) in &simplex[..d] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi / d as f64;
            }
        }
        let worst = simplex[d].0.clone();
        let xr = point(&c, &worst, -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = point(&c, &worst, -2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[d] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[d - 1].1 {
            simplex[d] = (xr, fr);
        } else {
            let (xc, fc) = if fr < fworst {
                let x = point(&c, &worst, -0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = point(&c, &worst, 0.5);
                let v = f(&x);
                (x, v)
            };
            evals += 1;
            if fc < fworst.min(fr) {
                simplex[d] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for s in simplex.iter_mut().skip(1) {
                    s.0 = point(&best, &s.0, 0.5);
                    s.1 = f(&s.0);
                }
                evals += d;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0).0
}

/// Expected payoff of the first node in the two-node detection game: the
/// trace of the fused precision in each detect/miss cell, weighted by the
/// cell probabilities.
pub fn expected_payoff(
    pa: &Matrix,
    pb: &Matrix,
    prof_a: &NodeProfile,
    prof_b: &NodeProfile,
    omega: f64,
) -> Result<f64> {
    let ia = linalg::strict_spd_inverse(pa, "input covariance")?;
    let ib = linalg::strict_spd_inverse(pb, "input covariance")?;
    let (p, q) = (prof_a.p_detect, prof_b.p_detect);
    let (xa, xb) = (prof_a.chi, prof_b.chi);
    let both = (&ia * omega + &ib * (1.0 - omega)).trace();
    let b_misses = (&ia * omega + &ib * ((1.0 - omega) * xb)).trace();
    let a_misses = (&ia * (omega * xa) + &ib * (1.0 - omega)).trace();
    let neither = ((&ia * omega + &ib * (1.0 - omega)) * (xa * xb)).trace();
    Ok(p * q * both + p * (1.0 - q) * b_misses + (1.0 - p) * q * a_misses + (1.0 - p) * (1.0 - q) * neither)
}
