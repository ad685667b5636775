use rand::Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{check_dim, Error, Result};
use crate::model::{ScoreModel, Timestep};
use crate::schedule::Schedule;

/// Diagonal-covariance Gaussian mixture `Σ_j w_j N(μ_j, diag(Σ_j))`, with
/// optional class labels per component.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub labels: Option<Vec<u32>>,
}

impl GmmParams {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        let bad = |m: &str| Err(Error::Model(m.to_string()));
        let j = weights.len();
        if j == 0 {
            return bad("mixture has no components");
        }
        if means.len() != j || variances.len() != j || labels.as_ref().is_some_and(|l| l.len() != j) {
            return bad("component arrays disagree in length");
        }
        let d = means[0].len();
        if d == 0 {
            return bad("dimension must be positive");
        }
        if means.iter().chain(&variances).any(|v| v.len() != d) {
            return bad("component dimensions disagree");
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and non-negative");
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("weights must sum to 1");
        }
        if means.iter().flatten().any(|m| !m.is_finite()) {
            return bad("means must be finite");
        }
        if variances.iter().flatten().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("variances must be finite and positive");
        }
        Ok(Self {
            weights,
            means,
            variances,
            labels,
        })
    }

    pub fn standard_normal(dim: usize) -> Self {
        Self::gaussian(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        Self {
            weights: vec![1.0],
            means: vec![mean],
            variances: vec![variance],
            labels: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Distinct class labels in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        let mut c = self.labels.clone().unwrap_or_default();
        c.sort_unstable();
        c.dedup();
        c
    }

    /// Canonical little-endian encoding of the parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.components() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.push(self.labels.is_some() as u8);
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in self.means.iter().chain(&self.variances).flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for l in self.labels.iter().flatten() {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); the result is validated.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader(bytes);
        let j = r.u32()? as usize;
        let d = r.u32()? as usize;
        let labelled = match r.take(1)?[0] {
            0 => false,
            1 => true,
            _ => return Err(Error::Model("bad label flag".into())),
        };
        let need = j
            .checked_mul(8 + 16 * d + if labelled { 4 } else { 0 })
            .ok_or_else(|| Error::Model("mixture size overflows".into()))?;
        if need > r.0.len() {
            return Err(Error::Truncated("mixture parameters".into()));
        }
        if d == 0 {
            return Err(Error::Model("dimension must be positive".into()));
        }
        let weights = r.f64s(j)?;
        let means = r.f64s(j * d)?.chunks(d).map(<[f64]>::to_vec).collect();
        let variances = r.f64s(j * d)?.chunks(d).map(<[f64]>::to_vec).collect();
        let labels = if labelled {
            Some((0..j).map(|_| r.u32()).collect::<Result<Vec<_>>>()?)
        } else {
            None
        };
        if !r.0.is_empty() {
            return Err(Error::Model("trailing bytes after mixture".into()));
        }
        Self::new(weights, means, variances, labels)
    }

    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.to_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Log-weights, restricted to one class and renormalized when `class` is
    /// given.
    fn log_weights(&self, class: Option<u32>) -> Result<Vec<f64>> {
        let Some(c) = class else {
            return Ok(self.weights.iter().map(|w| w.ln()).collect());
        };
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Model("mixture has no class labels".into()))?;
        let mass: f64 = self
            .weights
            .iter()
            .zip(labels)
            .filter(|(_, l)| **l == c)
            .map(|(w, _)| w)
            .sum();
        if !(mass > 0.0) {
            return Err(Error::Model(format!("class {c} has no probability mass")));
        }
        Ok(self
            .weights
            .iter()
            .zip(labels)
            .map(|(w, l)| if *l == c { (w / mass).ln() } else { f64::NEG_INFINITY })
            .collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_from(rng, &self.weights)
    }

    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R, class: u32) -> Result<Vec<f64>> {
        let w: Vec<f64> = self.log_weights(Some(class))?.iter().map(|l| l.exp()).collect();
        Ok(self.sample_from(rng, &w))
    }

    fn sample_from<R: Rng + ?Sized>(&self, rng: &mut R, weights: &[f64]) -> Vec<f64> {
        let mut u: f64 = rng.gen();
        let mut j = weights.len() - 1;
        for (idx, w) in weights.iter().enumerate() {
            if u < *w {
                j = idx;
                break;
            }
            u -= w;
        }
        self.means[j]
            .iter()
            .zip(&self.variances[j])
            .map(|(m, v)| {
                let z: f64 = rng.sample(StandardNormal);
                m + v.sqrt() * z
            })
            .collect()
    }

    /// Per-component responsibilities of the time-`ᾱ` marginal at `x`.
    pub(crate) fn posterior(&self, x: &[f64], alpha_bar: f64, class: Option<u32>) -> Result<Posterior> {
        check_dim(self.dim(), x.len())?;
        let root = alpha_bar.sqrt();
        let noise = 1.0 - alpha_bar;
        let log_w = self.log_weights(class)?;
        let mut log_joint = Vec::with_capacity(self.components());
        for j in 0..self.components() {
            let mut lp = log_w[j];
            if lp.is_finite() {
                for ((xi, m), s) in x.iter().zip(&self.means[j]).zip(&self.variances[j]) {
                    let v = alpha_bar * s + noise;
                    let r = xi - root * m;
                    lp -= 0.5 * ((std::f64::consts::TAU * v).ln() + r * r / v);
                }
            }
            log_joint.push(lp);
        }
        let log_norm = log_sum_exp(&log_joint);
        if !log_norm.is_finite() {
            return Err(Error::NonFinite("mixture log-density".into()));
        }
        let resp = log_joint.iter().map(|l| (l - log_norm).exp()).collect();
        Ok(Posterior {
            resp,
            log_density: log_norm,
        })
    }

    /// `log p_t(x)` of the time-`ᾱ` marginal.
    pub fn log_density(&self, x: &[f64], alpha_bar: f64) -> Result<f64> {
        Ok(self.posterior(x, alpha_bar, None)?.log_density)
    }

    pub(crate) fn score_at(&self, x: &[f64], alpha_bar: f64, class: Option<u32>) -> Result<Vec<f64>> {
        let post = self.posterior(x, alpha_bar, class)?;
        let root = alpha_bar.sqrt();
        let mut out = vec![0.0; x.len()];
        for (j, r) in post.resp.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            for (k, o) in out.iter_mut().enumerate() {
                let v = alpha_bar * self.variances[j][k] + 1.0 - alpha_bar;
                *o -= r * (x[k] - root * self.means[j][k]) / v;
            }
        }
        Ok(out)
    }

    /// Component posterior mean of `x_0` given `x_t = x`.
    pub(crate) fn component_x0(&self, j: usize, x: &[f64], alpha_bar: f64) -> Vec<f64> {
        let root = alpha_bar.sqrt();
        (0..x.len())
            .map(|k| {
                let s = self.variances[j][k];
                let m = self.means[j][k];
                let v = alpha_bar * s + 1.0 - alpha_bar;
                m + s * root * (x[k] - root * m) / v
            })
            .collect()
    }

    pub(crate) fn x0_at(&self, x: &[f64], alpha_bar: f64, class: Option<u32>) -> Result<Vec<f64>> {
        let post = self.posterior(x, alpha_bar, class)?;
        let mut out = vec![0.0; x.len()];
        for (j, r) in post.resp.iter().enumerate() {
            if *r == 0.0 {
                continue;
            }
            for (o, c) in out.iter_mut().zip(self.component_x0(j, x, alpha_bar)) {
                *o += r * c;
            }
        }
        Ok(out)
    }
}

pub(crate) struct Posterior {
    pub resp: Vec<f64>,
    pub log_density: f64,
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Truncated("mixture parameters".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn parse_class(condition: &str) -> Result<u32> {
    condition
        .trim()
        .parse()
        .map_err(|_| Error::Model(format!("condition '{condition}' is not a class label")))
}

/// Exact score of the diffused mixture at `step`.
pub fn gmm_score(x: &[f64], step: usize, params: &GmmParams, sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(step)?;
    params.score_at(x, sched.alpha_bar(step), None)
}

/// Exact `E[x_0 | x_i = x]`.
pub fn gmm_x0_pred(x: &[f64], step: usize, params: &GmmParams, sched: &Schedule) -> Result<Vec<f64>> {
    sched.check_step(step)?;
    params.x0_at(x, sched.alpha_bar(step), None)
}

/// `log p_i(class | x)` from the responsibilities of the diffused mixture.
pub fn gmm_class_logprob(
    x: &[f64],
    step: usize,
    class: u32,
    params: &GmmParams,
    sched: &Schedule,
) -> Result<f64> {
    sched.check_step(step)?;
    class_logprob_at(params, x, sched.alpha_bar(step), class)
}

pub(crate) fn class_logprob_at(params: &GmmParams, x: &[f64], alpha_bar: f64, class: u32) -> Result<f64> {
    let labels = params
        .labels
        .as_ref()
        .ok_or_else(|| Error::Model("mixture has no class labels".into()))?;
    let post = params.posterior(x, alpha_bar, None)?;
    let mass: f64 = post
        .resp
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == class)
        .map(|(r, _)| r)
        .sum();
    Ok(mass.ln())
}

/// A [`GmmParams`] mixture served as a [`ScoreModel`]. Conditions are class
/// labels written as decimal integers.
#[derive(Debug, Clone)]
pub struct GmmModel {
    params: GmmParams,
    fingerprint: u64,
}

impl GmmModel {
    pub fn new(params: GmmParams) -> Result<Self> {
        let params = GmmParams::new(params.weights, params.means, params.variances, params.labels)?;
        let fingerprint = params.fingerprint();
        Ok(Self { params, fingerprint })
    }

    pub fn params(&self) -> &GmmParams {
        &self.params
    }

    fn class(&self, condition: Option<&str>) -> Result<Option<u32>> {
        condition.map(parse_class).transpose()
    }

    /// Analytic classifier `log p_t(class | x)`.
    pub fn class_logprob(&self, x: &[f64], t: Timestep, class: u32) -> Result<f64> {
        class_logprob_at(&self.params, x, t.alpha_bar, class)
    }
}

impl ScoreModel for GmmModel {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    fn denoise(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>> {
        self.params.x0_at(x, t.alpha_bar, self.class(condition)?)
    }

    fn score(&self, x: &[f64], t: Timestep, condition: Option<&str>) -> Result<Vec<f64>> {
        self.params.score_at(x, t.alpha_bar, self.class(condition)?)
    }

    fn supports_conditioning(&self) -> bool {
        self.params.labels.is_some()
    }
}
