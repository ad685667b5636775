//! Closed-form models: diagonal Gaussian mixtures diffused through the VP
//! forward process, their classifiers, and linear-Gaussian observations.

mod gmm;
mod observation;

pub use gmm::{gmm_class_logprob, gmm_score, gmm_x0_pred, GmmModel, GmmParams};
pub use observation::{
    exact_target_grad, likelihood_grad, likelihood_grad_at, mmse_restorer, ExactTarget,
    GmmLikelihood, LinearObservation,
};
