#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fusion;
pub mod gaussian;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod rbmcda;
pub mod rbpf;
pub mod record;
pub mod rng;
pub mod scenario;

pub use error::{Error, Result};
pub use gaussian::{
    discretize_ct_model, kf_likelihood, kf_log_likelihood, kf_predict, kf_update,
    ContinuousMotionModel, GaussianEstimate, MeasurementModel, MotionModel,
};
