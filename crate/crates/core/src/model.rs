//! Score models and the single reverse step.
//!
//! A model is queried with the current iterate and a [`Timestep`]. Models
//! that only know their own discretization (remote networks) read
//! `Timestep::index`; analytic models read `Timestep::alpha_bar`.
//!
//! The score and the denoised prediction are two views of one quantity:
//!
//! ```text
//! s_i(x) = (sqrt(ᾱ_i) · x̂_{0|i} - x) / (1 - ᾱ_i)
//! ```

use crate::error::{check_dim, check_finite, Error, Result};
use crate::schedule::Schedule;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timestep {
    /// Timestep label in the model's own numbering.
    pub index: u32,
    /// Cumulative signal retention `ᾱ` at this timestep.
    pub alpha_bar: f64,
}

/// Anything that can denoise an iterate of the reverse process.
///
/// Implementations must be shareable read-only across threads. A model that
/// provides both `denoise` and `score` must keep them consistent through the
/// identity in the module docs.
pub trait ScoreModel: Send + Sync {
    fn dim(&self) -> usize;

    /// Stable hash of the model parameters. Streams record it (mixed with the
    /// schedule) so decoding against a different model fails loudly.
    fn fingerprint(&self) -> u64;

    /// Denoised prediction `x̂_{0|i}`, optionally under a condition.
    fn denoise(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>>;

    fn score(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>> {
        let x0 = self.denoise(x, t, condition)?;
        x0_to_score_at(x, &x0, t.alpha_bar)
    }

    fn supports_conditioning(&self) -> bool {
        false
    }
}

impl<M: ScoreModel + ?Sized> ScoreModel for &M {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn fingerprint(&self) -> u64 {
        (**self).fingerprint()
    }
    fn denoise(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>> {
        (**self).denoise(x, t, condition)
    }
    fn score(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>> {
        (**self).score(x, t, condition)
    }
    fn supports_conditioning(&self) -> bool {
        (**self).supports_conditioning()
    }
}

pub fn score_to_x0_at(x: &[f64], score: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_dim(x.len(), score.len())?;
    if !(alpha_bar > 0.0) {
        return Err(Error::InvalidSchedule("alpha_bar must be positive".into()));
    }
    let scale = alpha_bar.sqrt();
    let noise = 1.0 - alpha_bar;
    Ok(x.iter()
        .zip(score)
        .map(|(&xi, &si)| (xi + noise * si) / scale)
        .collect())
}

pub fn x0_to_score_at(x: &[f64], x0: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_dim(x.len(), x0.len())?;
    let noise = 1.0 - alpha_bar;
    if !(noise > 0.0) {
        return Err(Error::InvalidSchedule(
            "score is undefined where alpha_bar = 1".into(),
        ));
    }
    let scale = alpha_bar.sqrt();
    Ok(x.iter()
        .zip(x0)
        .map(|(&xi, &x0i)| (scale * x0i - xi) / noise)
        .collect())
}

/// `x̂_{0|i} = (x + (1 - ᾱ_i) s) / sqrt(ᾱ_i)`.
pub fn score_to_x0(x: &[f64], step: usize, score: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(step)?;
    score_to_x0_at(x, score, sched.alpha_bar(step))
}

/// `s_i = (sqrt(ᾱ_i) x̂ - x) / (1 - ᾱ_i)`.
pub fn x0_to_score(x: &[f64], step: usize, x0: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(step)?;
    x0_to_score_at(x, x0, sched.alpha_bar(step))
}

/// DDPM posterior mean `μ_i(x) = (x + (1 - α_i) s) / sqrt(α_i)`.
pub fn posterior_mean(x: &[f64], step: usize, score: &[f64], sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(step)?;
    check_dim(x.len(), score.len())?;
    let a = sched.alpha(step);
    let root = a.sqrt();
    let beta = 1.0 - a;
    Ok(x.iter()
        .zip(score)
        .map(|(&xi, &si)| (xi + beta * si) / root)
        .collect())
}

/// Everything the reverse process computes at one step before choosing noise.
#[derive(Debug, Clone)]
pub struct StepState {
    pub step: usize,
    pub x0_pred: Vec<f64>,
    pub score: Vec<f64>,
    pub mean: Vec<f64>,
    pub sigma: f64,
}

/// Evaluates the model at `x` and forms `x̂_{0|i}`, `s_i` and `μ_i`.
pub fn evaluate_step(
    model: &dyn ScoreModel,
    sched: &Schedule,
    x: &[f64],
    step: usize,
    condition: Option<&str>,
) -> Result<StepState> {
    sched.check_step(step)?;
    check_dim(model.dim(), x.len())?;
    let t = sched.timestep(step);
    let x0_pred = model.denoise(x, t, condition)?;
    check_dim(x.len(), x0_pred.len())?;
    check_finite("denoised prediction", &x0_pred)?;
    let score = x0_to_score_at(x, &x0_pred, t.alpha_bar)?;
    let mean = posterior_mean(x, step, &score, sched)?;
    Ok(StepState {
        step,
        x0_pred,
        score,
        mean,
        sigma: sched.sigma(step),
    })
}

/// `x_{i-1} = μ_i + σ_i · noise` for `i ≥ 2`.
pub fn apply_noise(state: &StepState, noise: &[f64]) -> Result<Vec<f64>> {
    if state.step == 1 {
        return Ok(state.mean.clone());
    }
    check_dim(state.mean.len(), noise.len())?;
    Ok(state
        .mean
        .iter()
        .zip(noise)
        .map(|(&m, &z)| m + state.sigma * z)
        .collect())
}

/// One codebook-driven reverse step. Step 1 adds no noise, so `noise` is
/// ignored there.
pub fn ddcm_step(
    x: &[f64],
    step: usize,
    noise: &[f64],
    model: &dyn ScoreModel,
    sched: &Schedule,
) -> Result<Vec<f64>> {
    let state = evaluate_step(model, sched, x, step, None)?;
    apply_noise(&state, noise)
}
