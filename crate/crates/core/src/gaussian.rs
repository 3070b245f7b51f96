//! Linear-Gaussian building blocks: estimates, models, and the three Kalman
//! primitives (predict, update, measurement likelihood).
//!
//! Everything here is a pure function over dynamically sized `nalgebra`
//! matrices. Covariances are re-symmetrized after every operation that
//! produces one.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, Vector};

/// Mean and covariance of a Gaussian state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianEstimate {
    pub mean: Vector,
    pub cov: Matrix,
}

impl GaussianEstimate {
    pub fn new(mean: Vector, cov: Matrix) -> Result<Self> {
        linalg::check_square(&cov, mean.len(), "GaussianEstimate covariance")?;
        if !mean.iter().all(|v| v.is_finite()) || !linalg::all_finite(&cov) {
            return Err(Error::NonFinite("GaussianEstimate"));
        }
        Ok(Self { mean, cov })
    }

    pub fn from_slices(mean: &[f64], cov_row_major: &[f64]) -> Result<Self> {
        let n = mean.len();
        if cov_row_major.len() != n * n {
            return Err(Error::dims(
                "GaussianEstimate::from_slices",
                n * n,
                cov_row_major.len(),
            ));
        }
        Self::new(
            Vector::from_column_slice(mean),
            Matrix::from_row_slice(n, n, cov_row_major),
        )
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Row-major flattening of the covariance.
    pub fn cov_row_major(&self) -> Vec<f64> {
        self.cov.transpose().iter().copied().collect()
    }

    /// Checks the symmetry and PSD tolerances every estimate should satisfy.
    pub fn satisfies_invariants(&self) -> bool {
        let scale = linalg::max_abs(&self.cov);
        let asym = linalg::max_abs(&(&self.cov - self.cov.transpose()));
        if asym > 1e-9 * scale.max(f64::MIN_POSITIVE) {
            return false;
        }
        let norm = linalg::spectral_norm(&self.cov);
        linalg::min_eigenvalue(&self.cov) >= -1e-9 * norm.max(f64::MIN_POSITIVE)
    }
}

/// Discrete transition `x_k = A x_{k-1} + q`, `q ~ N(0, Q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub transition: Matrix,
    pub process_noise: Matrix,
}

impl MotionModel {
    pub fn new(transition: Matrix, process_noise: Matrix) -> Result<Self> {
        let n = transition.nrows();
        linalg::check_square(&transition, n, "MotionModel transition")?;
        linalg::check_square(&process_noise, n, "MotionModel process noise")?;
        Ok(Self {
            transition,
            process_noise,
        })
    }

    /// `A = I`, `Q = 0`: no time passes.
    pub fn identity(n: usize) -> Self {
        Self {
            transition: Matrix::identity(n, n),
            process_noise: Matrix::zeros(n, n),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.transition.nrows()
    }
}

/// Linear measurement `y = H x + r`, `r ~ N(0, R)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    pub observation: Matrix,
    pub noise: Matrix,
}

impl MeasurementModel {
    pub fn new(observation: Matrix, noise: Matrix) -> Result<Self> {
        linalg::check_square(&noise, observation.nrows(), "MeasurementModel noise")?;
        linalg::cholesky(&noise, "measurement noise")?;
        Ok(Self { observation, noise })
    }

    /// Observes the first `meas_dim` state components with isotropic noise.
    pub fn position(state_dim: usize, meas_dim: usize, noise_var: f64) -> Result<Self> {
        let h = Matrix::from_fn(meas_dim, state_dim, |i, j| if i == j { 1.0 } else { 0.0 });
        Self::new(h, Matrix::identity(meas_dim, meas_dim) * noise_var)
    }

    pub fn meas_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.observation.ncols()
    }
}

/// Continuous-time linear SDE `dx = F x dt + L dβ`, with `dβ` of spectral
/// density `Qc`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousMotionModel {
    pub drift: Matrix,
    pub noise_input: Matrix,
    pub spectral_density: Matrix,
}

impl ContinuousMotionModel {
    pub fn new(drift: Matrix, noise_input: Matrix, spectral_density: Matrix) -> Result<Self> {
        let n = drift.nrows();
        linalg::check_square(&drift, n, "ContinuousMotionModel drift")?;
        if noise_input.nrows() != n {
            return Err(Error::dims(
                "ContinuousMotionModel noise input rows",
                n,
                noise_input.nrows(),
            ));
        }
        linalg::check_square(
            &spectral_density,
            noise_input.ncols(),
            "ContinuousMotionModel spectral density",
        )?;
        Ok(Self {
            drift,
            noise_input,
            spectral_density,
        })
    }

    /// Planar coordinated-turn model with state `[x, y, vx, vy]`:
    /// velocity rotates at rate `turn_rate` and is driven by white noise of
    /// density `diffusion · I₂`.
    pub fn planar_turn(turn_rate: f64, diffusion: f64) -> Self {
        #[rustfmt::skip]
        let drift = Matrix::from_row_slice(4, 4, &[
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
            0.0, 0.0, 0.0, turn_rate,
            0.0, 0.0, -turn_rate, 0.0,
        ]);
        #[rustfmt::skip]
        let noise_input = Matrix::from_row_slice(4, 2, &[
            0.0, 0.0,
            0.0, 0.0,
            1.0, 0.0,
            0.0, 1.0,
        ]);
        Self {
            drift,
            noise_input,
            spectral_density: Matrix::identity(2, 2) * diffusion,
        }
    }
}

fn check_estimate_dim(est: &GaussianEstimate, n: usize, context: &'static str) -> Result<()> {
    if est.dim() != n {
        return Err(Error::dims(context, n, est.dim()));
    }
    linalg::check_square(&est.cov, n, context)
}

/// Kalman prediction: `(A m, A P Aᵀ + Q)`.
pub fn kf_predict(est: &GaussianEstimate, model: &MotionModel) -> Result<GaussianEstimate> {
    let n = model.state_dim();
    check_estimate_dim(est, n, "kf_predict")?;
    let a = &model.transition;
    let mean = a * &est.mean;
    let cov = linalg::symmetrize(&(a * &est.cov * a.transpose() + &model.process_noise));
    Ok(GaussianEstimate { mean, cov })
}

struct Innovation {
    residual: Vector,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

fn innovation(
    prior: &GaussianEstimate,
    y: &Vector,
    model: &MeasurementModel,
) -> Result<Innovation> {
    check_estimate_dim(prior, model.state_dim(), "measurement update")?;
    if y.len() != model.meas_dim() {
        return Err(Error::dims("measurement vector", model.meas_dim(), y.len()));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("measurement"));
    }
    if !prior.mean.iter().all(|v| v.is_finite()) || !linalg::all_finite(&prior.cov) {
        return Err(Error::NonFinite("prior estimate"));
    }
    let h = &model.observation;
    let residual = y - h * &prior.mean;
    let s = linalg::symmetrize(&(h * &prior.cov * h.transpose() + &model.noise));
    let chol = linalg::cholesky(&s, "innovation covariance")?;
    Ok(Innovation { residual, chol })
}

/// Kalman update with gain `K = P Hᵀ S⁻¹`.
pub fn kf_update(
    prior: &GaussianEstimate,
    y: &Vector,
    model: &MeasurementModel,
) -> Result<GaussianEstimate> {
    let inn = innovation(prior, y, model)?;
    let h = &model.observation;
    // K = P Hᵀ S⁻¹, solved as S Kᵀ = H P.
    let ph_t = &prior.cov * h.transpose();
    let gain = inn.chol.solve(&ph_t.transpose()).transpose();
    let mean = &prior.mean + &gain * &inn.residual;
    let s = inn.chol.l() * inn.chol.l().transpose();
    let cov = linalg::symmetrize(&(&prior.cov - &gain * s * gain.transpose()));
    Ok(GaussianEstimate { mean, cov })
}

/// Log of the predictive density `N(y; H m, H P Hᵀ + R)`.
pub fn kf_log_likelihood(
    prior: &GaussianEstimate,
    y: &Vector,
    model: &MeasurementModel,
) -> Result<f64> {
    let inn = innovation(prior, y, model)?;
    let d = inn.residual.len() as f64;
    let whitened = inn.chol.l().solve_lower_triangular(&inn.residual).ok_or(
        Error::NotPositiveDefinite("innovation covariance"),
    )?;
    let log_det: f64 = inn.chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Ok(-0.5 * (whitened.norm_squared() + log_det + d * (2.0 * PI).ln()))
}

/// Predictive measurement density `N(y; H m, H P Hᵀ + R)`.
pub fn kf_likelihood(prior: &GaussianEstimate, y: &Vector, model: &MeasurementModel) -> Result<f64> {
    Ok(kf_log_likelihood(prior, y, model)?.exp())
}

/// Zero-order discretization over a step of length `dt` using the
/// augmented-exponential (Van Loan) construction.
pub fn discretize_ct_model(ct: &ContinuousMotionModel, dt: f64) -> Result<MotionModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let n = ct.drift.nrows();
    let g = &ct.noise_input * &ct.spectral_density * ct.noise_input.transpose();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(-&ct.drift * dt));
    aug.view_mut((0, n), (n, n)).copy_from(&(g * dt));
    aug.view_mut((n, n), (n, n)).copy_from(&(ct.drift.transpose() * dt));
    let e = aug.exp();
    let transition = e.view((n, n), (n, n)).transpose();
    let q = &transition * e.view((0, n), (n, n));
    Ok(MotionModel {
        transition,
        process_noise: linalg::symmetrize(&q),
    })
}
