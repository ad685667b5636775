use nalgebra::{DMatrix, DVector};

use super::gmm::{log_sum_exp, GmmParams};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linear::LinearOp;
use crate::model::Timestep;
use crate::sampler::LikelihoodGradient;
use crate::schedule::Schedule;

/// `y = A x_0 + noise_std · n` with `n ~ N(0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearObservation {
    pub op: LinearOp,
    pub y: Vec<f64>,
    pub noise_std: f64,
}

impl LinearObservation {
    pub fn new(op: LinearOp, y: Vec<f64>, noise_std: f64) -> Result<Self> {
        check_dim(op.out_dim(), y.len())?;
        check_finite("observation", &y)?;
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::InvalidConfig(format!("noise std {noise_std} must be >= 0")));
        }
        Ok(Self { op, y, noise_std })
    }
}

/// `S⁻¹ r` and `log N(r; 0, S)` for `S = A diag(cov) Aᵀ + s² I`.
struct GaussianFit {
    solved: Vec<f64>,
    log_pdf: f64,
}

fn fit(obs: &LinearObservation, cov: &[f64], resid: &[f64]) -> Result<GaussianFit> {
    let s2 = obs.noise_std * obs.noise_std;
    let n = resid.len() as f64;
    let ln_tau = std::f64::consts::TAU.ln();
    match &obs.op {
        LinearOp::Mask { observed, .. } => {
            let mut solved = Vec::with_capacity(observed.len());
            let mut log_pdf = -0.5 * n * ln_tau;
            for (&j, &r) in observed.iter().zip(resid) {
                let v = cov[j] + s2;
                if !(v > 0.0) {
                    return Err(Error::DegenerateLikelihood(
                        "observed coordinate with zero variance".into(),
                    ));
                }
                solved.push(r / v);
                log_pdf -= 0.5 * (v.ln() + r * r / v);
            }
            Ok(GaussianFit { solved, log_pdf })
        }
        LinearOp::Dense { rows, cols, data } => {
            if s2 == 0.0 {
                return Err(Error::DegenerateLikelihood(
                    "noiseless observation through a general operator".into(),
                ));
            }
            let a = DMatrix::from_row_slice(*rows, *cols, data);
            let scaled = DMatrix::from_fn(*rows, *cols, |r, c| a[(r, c)] * cov[c]);
            let s = &scaled * a.transpose() + DMatrix::identity(*rows, *rows) * s2;
            let chol = s.cholesky().ok_or_else(|| {
                Error::DegenerateLikelihood("observation covariance is not positive definite".into())
            })?;
            let r = DVector::from_column_slice(resid);
            let solved = chol.solve(&r);
            let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let log_pdf = -0.5 * (n * ln_tau + log_det + r.dot(&solved));
            Ok(GaussianFit {
                solved: solved.as_slice().to_vec(),
                log_pdf,
            })
        }
    }
}

fn check_obs(obs: &LinearObservation, params: &GmmParams) -> Result<()> {
    check_dim(params.dim(), obs.op.in_dim())?;
    check_dim(obs.op.out_dim(), obs.y.len())
}

/// `∇_x log p_t(y | x_t = x)` for a mixture prior and a linear-Gaussian
/// observation, with `t` given by `alpha_bar`.
///
/// Under component `j`, `x_0 | x_t` is Gaussian with mean `m0_j(x)` and
/// covariance `P_j`, so `p(y | x_t) = Σ_j r_j(x) N(y; A m0_j(x), A P_j Aᵀ + s² I)`.
pub fn likelihood_grad_at(
    x: &[f64],
    alpha_bar: f64,
    obs: &LinearObservation,
    params: &GmmParams,
) -> Result<Vec<f64>> {
    check_obs(obs, params)?;
    let post = params.posterior(x, alpha_bar, None)?;
    let root = alpha_bar.sqrt();
    let noise = 1.0 - alpha_bar;
    let d = x.len();
    let score = params.score_at(x, alpha_bar, None)?;

    let mut log_terms = Vec::new();
    let mut grads = Vec::new();
    for (j, &r) in post.resp.iter().enumerate() {
        if r == 0.0 {
            continue;
        }
        let var = &params.variances[j];
        let v: Vec<f64> = var.iter().map(|s| alpha_bar * s + noise).collect();
        let p: Vec<f64> = var.iter().zip(&v).map(|(s, vk)| s * noise / vk).collect();
        let m0 = params.component_x0(j, x, alpha_bar);
        let pred = obs.op.apply(&m0)?;
        let resid: Vec<f64> = obs.y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let f = fit(obs, &p, &resid)?;
        let back = obs.op.apply_transpose(&f.solved)?;
        let g: Vec<f64> = (0..d)
            .map(|k| {
                let mk = root * params.means[j][k];
                -(x[k] - mk) / v[k] - score[k] + var[k] * root / v[k] * back[k]
            })
            .collect();
        log_terms.push(r.ln() + f.log_pdf);
        grads.push(g);
    }
    let norm = log_sum_exp(&log_terms);
    if !norm.is_finite() {
        return Err(Error::DegenerateLikelihood("observation has zero likelihood".into()));
    }
    let mut out = vec![0.0; d];
    for (lt, g) in log_terms.iter().zip(&grads) {
        let rho = (lt - norm).exp();
        for (o, gk) in out.iter_mut().zip(g) {
            *o += rho * gk;
        }
    }
    Ok(out)
}

pub fn likelihood_grad(
    x: &[f64],
    step: usize,
    obs: &LinearObservation,
    params: &GmmParams,
    sched: &Schedule,
) -> Result<Vec<f64>> {
    sched.check_step(step)?;
    likelihood_grad_at(x, sched.alpha_bar(step), obs, params)
}

/// Gradient for the observation `y = x_0` itself:
/// `sqrt(ᾱ) / (1 - ᾱ) · (x_0 - x̂_0)`.
pub fn exact_target_grad(target: &[f64], x0_pred: &[f64], alpha_bar: f64) -> Result<Vec<f64>> {
    check_dim(target.len(), x0_pred.len())?;
    let c = alpha_bar.sqrt() / (1.0 - alpha_bar);
    Ok(target.iter().zip(x0_pred).map(|(a, b)| c * (a - b)).collect())
}

/// Exact posterior mean `E[x_0 | y]` under the mixture prior.
pub fn mmse_restorer(obs: &LinearObservation, params: &GmmParams) -> Result<Vec<f64>> {
    check_obs(obs, params)?;
    let mut log_terms = Vec::new();
    let mut means = Vec::new();
    for j in 0..params.components() {
        let w = params.weights[j];
        if w == 0.0 {
            continue;
        }
        let pred = obs.op.apply(&params.means[j])?;
        let resid: Vec<f64> = obs.y.iter().zip(&pred).map(|(a, b)| a - b).collect();
        let f = fit(obs, &params.variances[j], &resid)?;
        let back = obs.op.apply_transpose(&f.solved)?;
        let m: Vec<f64> = (0..params.dim())
            .map(|k| params.means[j][k] + params.variances[j][k] * back[k])
            .collect();
        log_terms.push(w.ln() + f.log_pdf);
        means.push(m);
    }
    let norm = log_sum_exp(&log_terms);
    if !norm.is_finite() {
        return Err(Error::DegenerateLikelihood("observation has zero likelihood".into()));
    }
    let mut out = vec![0.0; params.dim()];
    for (lt, m) in log_terms.iter().zip(&means) {
        let pi = (lt - norm).exp();
        for (o, mk) in out.iter_mut().zip(m) {
            *o += pi * mk;
        }
    }
    Ok(out)
}

/// Likelihood gradients of a linear observation under a mixture prior.
#[derive(Debug, Clone)]
pub struct GmmLikelihood {
    pub params: GmmParams,
    pub obs: LinearObservation,
}

impl LikelihoodGradient for GmmLikelihood {
    fn grad(&self, x: &[f64], t: Timestep, _x0_pred: &[f64]) -> Result<Vec<f64>> {
        likelihood_grad_at(x, t.alpha_bar, &self.obs, &self.params)
    }
}

/// Likelihood gradient for observing the clean signal itself.
#[derive(Debug, Clone)]
pub struct ExactTarget {
    pub x0: Vec<f64>,
}

impl LikelihoodGradient for ExactTarget {
    fn grad(&self, _x: &[f64], t: Timestep, x0_pred: &[f64]) -> Result<Vec<f64>> {
        exact_target_grad(&self.x0, x0_pred, t.alpha_bar)
    }
}
