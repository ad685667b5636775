//! The reverse-process driver.
//!
//! [`Sampler::run`] walks `x_T → x_0`, asking a [`SelectionRule`] for a
//! codebook index at every step that has a choice, and records what it
//! picked. [`Sampler::replay`] rebuilds the same trajectory from the record
//! alone. Both share one code path for turning indices into noise, so a
//! replay is bit-identical to the run that produced it.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::codebook::CodebookSource;
use crate::codec::{mp_refine, pursuit_noise, StepCode};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linear::LinearOp;
use crate::model::{apply_noise, evaluate_step, ScoreModel, Timestep};
use crate::schedule::Schedule;
use crate::selection::{
    select_ccfg, select_ccg, select_compression, select_linear_inverse, select_posterior_loss,
    select_random, select_restoration, Branch, Classifier, QualityMeasure,
};

/// Supplies `∇_x log p_i(y | x_i)` for some fixed observation `y`.
pub trait LikelihoodGradient: Send + Sync {
    fn grad(&self, x: &[f64], t: Timestep, x0_pred: &[f64]) -> Result<Vec<f64>>;
}

/// Matching-pursuit depth `M` and coefficient levels `C`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pursuit {
    pub depth: u32,
    pub coeffs: u32,
}

impl Pursuit {
    pub const NONE: Pursuit = Pursuit { depth: 1, coeffs: 0 };

    pub fn new(depth: u32, coeffs: u32) -> Result<Self> {
        if depth == 0 || (depth > 1 && coeffs < 2) {
            return Err(Error::InvalidConfig(format!(
                "pursuit depth {depth} with {coeffs} coefficient levels"
            )));
        }
        Ok(Self { depth, coeffs })
    }
}

#[derive(Clone)]
pub enum SelectionRule {
    /// Uniform indices: plain generation.
    Random,
    /// Inner-product selection towards a known clean signal, optionally
    /// refined by matching pursuit.
    Compression { target: Vec<f64>, pursuit: Pursuit },
    /// `argmin ‖C(k) − σ ∇log p(y | x)‖²`, optionally over a drawn subset.
    PosteriorLoss {
        provider: Arc<dyn LikelihoodGradient>,
        subset: Option<u32>,
    },
    /// `argmin ‖y − A(μ + σ C(k))‖²`.
    LinearInverse { op: LinearOp, y: Vec<f64> },
    /// Two-candidate perception-distortion selection around `r(y)`.
    Restoration {
        reference: Vec<f64>,
        lambda: f64,
        quality: Arc<dyn QualityMeasure>,
    },
    Ccg {
        classifier: Arc<dyn Classifier>,
        condition: String,
        ktilde: u32,
    },
    Ccfg { condition: String, ktilde: u32 },
}

impl fmt::Debug for SelectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SelectionRule::Random => f.write_str("Random"),
            SelectionRule::Compression { pursuit, .. } => write!(f, "Compression({pursuit:?})"),
            SelectionRule::PosteriorLoss { subset, .. } => write!(f, "PosteriorLoss(subset {subset:?})"),
            SelectionRule::LinearInverse { op, .. } => write!(f, "LinearInverse({op:?})"),
            SelectionRule::Restoration { lambda, .. } => write!(f, "Restoration(lambda {lambda})"),
            SelectionRule::Ccg { condition, ktilde, .. } => write!(f, "Ccg({condition}, {ktilde})"),
            SelectionRule::Ccfg { condition, ktilde } => write!(f, "Ccfg({condition}, {ktilde})"),
        }
    }
}

/// Which condition the denoiser sees at each step: `before` on steps above
/// `switch_at`, `after` on steps `1..=switch_at`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Conditioning {
    pub before: Option<String>,
    pub after: Option<String>,
    pub switch_at: usize,
}

impl Conditioning {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn fixed(condition: impl Into<String>) -> Self {
        let c = condition.into();
        Self {
            before: Some(c.clone()),
            after: Some(c),
            switch_at: 0,
        }
    }

    pub fn switch(src: Option<String>, dst: Option<String>, switch_at: usize) -> Self {
        Self {
            before: src,
            after: dst,
            switch_at,
        }
    }

    pub fn at(&self, step: usize) -> Option<&str> {
        if step > self.switch_at {
            self.before.as_deref()
        } else {
            self.after.as_deref()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub code: StepCode,
    pub branch: Option<Branch>,
    /// For the posterior-loss rule: `‖C(k) − σ ∇log p(y | x)‖` at the choice.
    pub loss: Option<f64>,
    /// Candidates whose loss was evaluated; 0 means a full scan or no choice.
    pub evaluated: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub output: Vec<f64>,
    pub init_index: u32,
    /// One record per step, from `T` down to `2`.
    pub steps: Vec<StepRecord>,
}

impl Trajectory {
    pub fn codes(&self) -> Vec<StepCode> {
        self.steps.iter().map(|s| s.code.clone()).collect()
    }
}

pub struct Sampler<'a> {
    pub model: &'a dyn ScoreModel,
    pub sched: &'a Schedule,
    pub books: &'a dyn CodebookSource,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a dyn ScoreModel, sched: &'a Schedule, books: &'a dyn CodebookSource) -> Result<Self> {
        check_dim(model.dim(), books.dim())?;
        if books.size(sched.len() + 1) == 0 {
            return Err(Error::InvalidConfig("no initialization codebook".into()));
        }
        Ok(Self { model, sched, books })
    }

    fn noise(&self, step: usize, code: &StepCode, coeffs: u32) -> Result<Vec<f64>> {
        pursuit_noise(self.books, step, code.index, &code.refinements, coeffs)
    }

    /// Runs the reverse process under `rule`. `rng` drives uniform draws:
    /// the initialization index when `K_{T+1} > 1`, random selection, and
    /// candidate subsets.
    pub fn run(&self, rule: &SelectionRule, cond: &Conditioning, rng: &mut dyn RngCore) -> Result<Trajectory> {
        let steps = self.sched.len();
        let coeffs = match rule {
            SelectionRule::Compression { target, pursuit } => {
                check_dim(self.books.dim(), target.len())?;
                Pursuit::new(pursuit.depth, pursuit.coeffs)?;
                pursuit.coeffs
            }
            _ => 0,
        };
        let init_index = select_random(self.books.size(steps + 1) as u32, rng);
        let mut x = self.books.entry(steps + 1, init_index)?.to_vec();
        let mut records = Vec::with_capacity(steps.saturating_sub(1));

        for step in (1..=steps).rev() {
            let state = evaluate_step(self.model, self.sched, &x, step, cond.at(step))?;
            if step == 1 {
                x = state.mean;
                break;
            }
            let k = self.books.size(step) as u32;
            let mut record = StepRecord {
                step,
                code: StepCode::single(1),
                branch: None,
                loss: None,
                evaluated: 0,
            };
            let mut noise = None;
            if k > 1 {
                match rule {
                    SelectionRule::Random => record.code.index = select_random(k, rng),
                    SelectionRule::Compression { target, pursuit } => {
                        let residual: Vec<f64> =
                            target.iter().zip(&state.x0_pred).map(|(a, b)| a - b).collect();
                        if pursuit.depth <= 1 {
                            record.code.index = select_compression(&residual, self.books, step)?.index();
                        } else {
                            let out = mp_refine(&residual, self.books, step, pursuit.depth, pursuit.coeffs)?;
                            record.code = StepCode {
                                index: out.indices[0],
                                refinements: out.indices[1..].iter().copied().zip(out.coeff_ids).collect(),
                            };
                            noise = Some(out.noise);
                        }
                    }
                    SelectionRule::PosteriorLoss { provider, subset } => {
                        let t = self.sched.timestep(step);
                        let g = provider.grad(&x, t, &state.x0_pred)?;
                        let draw = match subset {
                            Some(s) => Some((*s, &mut *rng)),
                            None => None,
                        };
                        let out = select_posterior_loss(&g, state.sigma, self.books, step, draw)?;
                        let c = self.books.entry(step, out.index())?;
                        let dist = c
                            .iter()
                            .zip(&g)
                            .map(|(ci, gi)| (ci - state.sigma * gi).powi(2))
                            .sum::<f64>()
                            .sqrt();
                        record.code.index = out.index();
                        record.loss = Some(dist);
                        record.evaluated = out.candidates.len();
                    }
                    SelectionRule::LinearInverse { op, y } => {
                        record.code.index =
                            select_linear_inverse(y, op, &state.mean, state.sigma, self.books, step)?.index();
                    }
                    SelectionRule::Restoration {
                        reference,
                        lambda,
                        quality,
                    } => {
                        let out = select_restoration(
                            reference,
                            &state,
                            self.model,
                            self.sched,
                            self.books,
                            *lambda,
                            quality.as_ref(),
                            cond.at(step - 1),
                            rng,
                        )?;
                        record.code.index = out.index();
                        record.branch = out.branch;
                        record.evaluated = out.candidates.len();
                    }
                    SelectionRule::Ccg {
                        classifier,
                        condition,
                        ktilde,
                    } => {
                        let out = select_ccg(
                            classifier.as_ref(),
                            condition,
                            &state.mean,
                            state.sigma,
                            self.sched,
                            self.books,
                            step,
                            *ktilde,
                            rng,
                        )?;
                        record.code.index = out.index();
                        record.evaluated = out.candidates.len();
                    }
                    SelectionRule::Ccfg { condition, ktilde } => {
                        let t = self.sched.timestep(step);
                        let cond_score = self.model.score(&x, t, Some(condition))?;
                        let uncond = if cond.at(step).is_none() {
                            state.score.clone()
                        } else {
                            self.model.score(&x, t, None)?
                        };
                        let out = select_ccfg(&cond_score, &uncond, self.books, step, *ktilde, rng)?;
                        record.code.index = out.index();
                        record.evaluated = out.candidates.len();
                    }
                }
            }
            let noise = match noise {
                Some(n) => n,
                None => self.noise(step, &record.code, coeffs)?,
            };
            x = apply_noise(&state, &noise)?;
            check_finite("trajectory state", &x)?;
            records.push(record);
        }
        check_finite("trajectory output", &x)?;
        Ok(Trajectory {
            output: x,
            init_index,
            steps: records,
        })
    }

    /// Rebuilds a trajectory from its initialization index and step codes
    /// (ordered `T` down to `2`).
    pub fn replay(&self, init_index: u32, codes: &[StepCode], coeffs: u32, cond: &Conditioning) -> Result<Vec<f64>> {
        let steps = self.sched.len();
        if codes.len() + 1 != steps {
            return Err(Error::InvalidConfig(format!(
                "{} step codes for {steps} steps",
                codes.len()
            )));
        }
        let mut x = self.books.entry(steps + 1, init_index)?.to_vec();
        for step in (1..=steps).rev() {
            let state = evaluate_step(self.model, self.sched, &x, step, cond.at(step))?;
            if step == 1 {
                x = state.mean;
                break;
            }
            let noise = self.noise(step, &codes[steps - step], coeffs)?;
            x = apply_noise(&state, &noise)?;
            check_finite("trajectory state", &x)?;
        }
        Ok(x)
    }
}

/// Classical DDPM ancestral sampling with fresh standard-normal noise.
pub fn ddpm_sample(model: &dyn ScoreModel, sched: &Schedule, cond: &Conditioning, rng: &mut dyn RngCore) -> Result<Vec<f64>> {
    let d = model.dim();
    let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    for step in (1..=sched.len()).rev() {
        let state = evaluate_step(model, sched, &x, step, cond.at(step))?;
        if step == 1 {
            return Ok(state.mean);
        }
        let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        x = apply_noise(&state, &z)?;
    }
    Ok(x)
}
