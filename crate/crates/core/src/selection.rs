//! Index-selection rules.
//!
//! Each rule picks one entry of the codebook at a timestep. Full scans break
//! ties towards the lowest index; subset rules break ties towards the
//! candidate drawn first. Subsets are drawn uniformly with replacement from a
//! caller-owned stream, so changing the subset size never changes codebook
//! contents.

use rand::{Rng, RngCore};

use crate::codebook::{CodebookEntryId, CodebookSource};
use crate::error::{check_dim, check_finite, Error, Result};
use crate::linear::LinearOp;
use crate::model::{ScoreModel, StepState};
use crate::schedule::Schedule;

/// Which restoration candidate won.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// The distortion candidate, aligned with `r(y) - x̂_0`.
    D,
    /// The uniformly drawn perception candidate.
    P,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub chosen: CodebookEntryId,
    /// Loss of each evaluated candidate, in evaluation order.
    pub loss_values: Option<Vec<f64>>,
    pub branch: Option<Branch>,
    /// Indices that were evaluated, in evaluation order.
    pub candidates: Vec<u32>,
}

impl SelectionOutcome {
    fn scan(timestep: usize, index: u32) -> Self {
        Self {
            chosen: CodebookEntryId::new(timestep as u32, index),
            loss_values: None,
            branch: None,
            candidates: Vec::new(),
        }
    }

    pub fn index(&self) -> u32 {
        self.chosen.index
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn codebook_of(book: &dyn CodebookSource, timestep: usize) -> Result<(&[f64], usize)> {
    let block = book.block(timestep)?;
    let d = book.dim();
    if block.is_empty() {
        return Err(Error::StepOutOfRange {
            step: timestep,
            steps: timestep,
        });
    }
    Ok((block, d))
}

/// Lowest index attaining the maximum of `f` over the codebook.
fn argmax_full(
    book: &dyn CodebookSource,
    timestep: usize,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Result<SelectionOutcome> {
    let (block, d) = codebook_of(book, timestep)?;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (j, row) in block.chunks_exact(d).enumerate() {
        let v = f(row);
        if v > best.0 || j == 0 {
            best = (v, j);
        }
    }
    Ok(SelectionOutcome::scan(timestep, best.1 as u32 + 1))
}

/// Uniform index in `1..=k`. A single-entry codebook consumes no randomness.
pub fn select_random(k: u32, rng: &mut dyn RngCore) -> u32 {
    if k <= 1 {
        1
    } else {
        rng.gen_range(1..=k)
    }
}

/// `K̃` indices drawn uniformly with replacement from `1..=k`.
pub fn draw_subset(k: u32, ktilde: u32, rng: &mut dyn RngCore) -> Result<Vec<u32>> {
    if ktilde == 0 || ktilde > k {
        return Err(Error::InvalidConfig(format!(
            "subset size {ktilde} outside 1..={k}"
        )));
    }
    Ok((0..ktilde).map(|_| select_random(k, rng)).collect())
}

/// First candidate attaining the minimum loss.
fn argmin_subset(
    book: &dyn CodebookSource,
    timestep: usize,
    subset: Vec<u32>,
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
) -> Result<SelectionOutcome> {
    let mut losses = Vec::with_capacity(subset.len());
    let mut best = 0;
    for (n, &k) in subset.iter().enumerate() {
        let l = loss(book.entry(timestep, k)?)?;
        if l < losses.get(best).copied().unwrap_or(f64::INFINITY) || n == 0 {
            best = n;
        }
        losses.push(l);
    }
    Ok(SelectionOutcome {
        chosen: CodebookEntryId::new(timestep as u32, subset[best]),
        loss_values: Some(losses),
        branch: None,
        candidates: subset,
    })
}

/// `argmax_k ⟨C_i(k), residual⟩` over the whole codebook.
pub fn select_compression(
    residual: &[f64],
    book: &dyn CodebookSource,
    timestep: usize,
) -> Result<SelectionOutcome> {
    check_dim(book.dim(), residual.len())?;
    argmax_full(book, timestep, |row| dot(row, residual))
}

/// `argmin_k ‖C_i(k) - σ_i · grad‖²`, over the codebook or a drawn subset.
pub fn select_posterior_loss<'r>(
    grad: &[f64],
    sigma: f64,
    book: &dyn CodebookSource,
    timestep: usize,
    subset: Option<(u32, &mut (dyn RngCore + 'r))>,
) -> Result<SelectionOutcome> {
    check_dim(book.dim(), grad.len())?;
    check_finite("likelihood gradient", grad)?;
    let target: Vec<f64> = grad.iter().map(|g| sigma * g).collect();
    match subset {
        None => argmax_full(book, timestep, |row| -sq_dist(row, &target)),
        Some((ktilde, rng)) => {
            let idx = draw_subset(book.size(timestep) as u32, ktilde, rng)?;
            argmin_subset(book, timestep, idx, |row| Ok(sq_dist(row, &target)))
        }
    }
}

/// `argmin_k ‖y - A(μ + σ_i C_i(k))‖²`.
pub fn select_linear_inverse(
    y: &[f64],
    op: &LinearOp,
    mean: &[f64],
    sigma: f64,
    book: &dyn CodebookSource,
    timestep: usize,
) -> Result<SelectionOutcome> {
    check_dim(book.dim(), mean.len())?;
    check_dim(op.in_dim(), mean.len())?;
    check_dim(op.out_dim(), y.len())?;
    let am = op.apply(mean)?;
    let gap: Vec<f64> = y.iter().zip(&am).map(|(a, b)| a - b).collect();
    match op {
        LinearOp::Mask { observed, .. } => argmax_full(book, timestep, |row| {
            -observed
                .iter()
                .zip(&gap)
                .map(|(&j, g)| (g - sigma * row[j]).powi(2))
                .sum::<f64>()
        }),
        LinearOp::Dense { cols, data, .. } => argmax_full(book, timestep, |row| {
            -data
                .chunks(*cols)
                .zip(&gap)
                .map(|(a, g)| (g - sigma * dot(a, row)).powi(2))
                .sum::<f64>()
        }),
    }
}

/// A no-reference quality score; lower is better.
pub trait QualityMeasure: Send + Sync {
    fn quality(&self, x: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> f64 + Send + Sync> QualityMeasure for F {
    fn quality(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// Mean squared error between two signals.
pub fn mean_sq(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b) / a.len() as f64
}

/// Perception-distortion selection between two candidates.
///
/// `k_D` maximizes `⟨C_i(k), r(y) - x̂_{0|i}⟩`; `k_P` is uniform. Each candidate
/// is stepped to `x_{i-1}`, denoised once more, and scored by
/// `mean_sq(r(y), x̂_{0|i-1}) + λ Q(x̂_{0|i-1})`. Ties go to the lower index.
#[allow(clippy::too_many_arguments)]
pub fn select_restoration(
    reference: &[f64],
    state: &StepState,
    model: &dyn ScoreModel,
    sched: &Schedule,
    book: &dyn CodebookSource,
    lambda: f64,
    quality: &dyn QualityMeasure,
    condition: Option<&str>,
    rng: &mut dyn RngCore,
) -> Result<SelectionOutcome> {
    let step = state.step;
    if step < 2 {
        return Err(Error::StepOutOfRange {
            step,
            steps: sched.len(),
        });
    }
    if !(lambda >= 0.0) {
        return Err(Error::InvalidConfig(format!("lambda {lambda} must be >= 0")));
    }
    check_dim(state.x0_pred.len(), reference.len())?;
    let residual: Vec<f64> = reference.iter().zip(&state.x0_pred).map(|(a, b)| a - b).collect();
    let k_d = select_compression(&residual, book, step)?.index();
    let k_p = select_random(book.size(step) as u32, rng);
    let next_t = sched.timestep(step - 1);
    let criterion = |k: u32| -> Result<f64> {
        let c = book.entry(step, k)?;
        let next: Vec<f64> = state
            .mean
            .iter()
            .zip(c)
            .map(|(m, z)| m + state.sigma * z)
            .collect();
        let x0 = model.denoise(&next, next_t, condition)?;
        check_dim(reference.len(), x0.len())?;
        let q = quality.quality(&x0)?;
        if !q.is_finite() {
            return Err(Error::NonFinite("quality measure".into()));
        }
        Ok(mean_sq(reference, &x0) + lambda * q)
    };
    let l_d = criterion(k_d)?;
    let l_p = criterion(k_p)?;
    let pick_d = l_d < l_p || (l_d == l_p && k_d <= k_p);
    let (chosen, branch) = if pick_d { (k_d, Branch::D) } else { (k_p, Branch::P) };
    Ok(SelectionOutcome {
        chosen: CodebookEntryId::new(step as u32, chosen),
        loss_values: Some(vec![l_d, l_p]),
        branch: Some(branch),
        candidates: vec![k_d, k_p],
    })
}

/// `log c(condition; x, t)`, a classifier on noisy signals.
pub trait Classifier: Send + Sync {
    fn log_prob(&self, x: &[f64], t: crate::model::Timestep, condition: &str) -> Result<f64>;
}

impl Classifier for crate::analytic::GmmModel {
    fn log_prob(&self, x: &[f64], t: crate::model::Timestep, condition: &str) -> Result<f64> {
        let class = condition
            .trim()
            .parse()
            .map_err(|_| Error::Model(format!("condition '{condition}' is not a class label")))?;
        self.class_logprob(x, t, class)
    }
}

/// Compressed classifier guidance: over `K̃` drawn candidates, minimize
/// `-log c(condition; μ + σ_i C_i(k))` with the classifier evaluated at the
/// candidate's own timestep `i - 1`.
#[allow(clippy::too_many_arguments)]
pub fn select_ccg(
    classifier: &dyn Classifier,
    condition: &str,
    mean: &[f64],
    sigma: f64,
    sched: &Schedule,
    book: &dyn CodebookSource,
    timestep: usize,
    ktilde: u32,
    rng: &mut dyn RngCore,
) -> Result<SelectionOutcome> {
    check_dim(book.dim(), mean.len())?;
    sched.check_step(timestep)?;
    if timestep < 2 {
        return Err(Error::StepOutOfRange {
            step: timestep,
            steps: sched.len(),
        });
    }
    let t = sched.timestep(timestep - 1);
    let idx = draw_subset(book.size(timestep) as u32, ktilde, rng)?;
    let mut next = vec![0.0; mean.len()];
    argmin_subset(book, timestep, idx, |row| {
        for ((n, m), z) in next.iter_mut().zip(mean).zip(row) {
            *n = m + sigma * z;
        }
        let lp = classifier.log_prob(&next, t, condition)?;
        if lp.is_nan() || lp == f64::INFINITY {
            return Err(Error::NonFinite("classifier log-probability".into()));
        }
        Ok(-lp)
    })
}

/// Compressed classifier-free guidance: over `K̃` drawn candidates, maximize
/// `⟨C_i(k), s_i(x | y) - s_i(x)⟩`.
pub fn select_ccfg(
    cond_score: &[f64],
    uncond_score: &[f64],
    book: &dyn CodebookSource,
    timestep: usize,
    ktilde: u32,
    rng: &mut dyn RngCore,
) -> Result<SelectionOutcome> {
    check_dim(book.dim(), cond_score.len())?;
    check_dim(book.dim(), uncond_score.len())?;
    check_finite("conditional score", cond_score)?;
    check_finite("unconditional score", uncond_score)?;
    let diff: Vec<f64> = cond_score.iter().zip(uncond_score).map(|(a, b)| a - b).collect();
    let idx = draw_subset(book.size(timestep) as u32, ktilde, rng)?;
    argmin_subset(book, timestep, idx, |row| Ok(-dot(row, &diff)))
}
