//! Variance-preserving noise schedules.
//!
//! Steps are 1-indexed everywhere in the public API: step `i` runs from 1 to
//! [`Schedule::len`], and storage slot `i - 1` backs it. Each step also carries
//! a *label*, the timestep the score model is queried with. Labels equal the
//! step index for a full schedule and name the retained original timesteps for
//! a sub-sampled one.

use crate::codebook::KSchedule;
use crate::error::{Error, Result};
use crate::model::Timestep;

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
    labels: Vec<u32>,
}

impl Schedule {
    /// Linear β schedule: `β_i` interpolates `beta_start..=beta_end` over
    /// `i = 1..=steps`, and `α_i = 1 - β_i`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(Error::InvalidSchedule(format!(
                "need at least 2 steps, got {steps}"
            )));
        }
        let valid = |b: f64| b.is_finite() && b > 0.0 && b < 1.0;
        if !valid(beta_start) || !valid(beta_end) || beta_start > beta_end {
            return Err(Error::InvalidSchedule(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let span = beta_end - beta_start;
        let alphas = (0..steps)
            .map(|j| 1.0 - (beta_start + span * j as f64 / (steps - 1) as f64))
            .collect();
        Self::from_alphas(alphas, (1..=steps as u32).collect())
    }

    /// Builds a schedule from per-step `α_i` and model timestep labels.
    pub fn from_alphas(alpha: Vec<f64>, labels: Vec<u32>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(Error::InvalidSchedule("empty schedule".into()));
        }
        if labels.len() != alpha.len() {
            return Err(Error::InvalidSchedule(format!(
                "{} labels for {} steps",
                labels.len(),
                alpha.len()
            )));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a > 0.0 && **a <= 1.0)) {
            return Err(Error::InvalidSchedule(format!("alpha {a} outside (0, 1]")));
        }
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule(
                "alpha_bar must strictly decrease after the first step".into(),
            ));
        }
        if !(*alpha_bar.last().unwrap() > 0.0) {
            return Err(Error::InvalidSchedule("alpha_bar underflows to zero".into()));
        }
        let sigma = alpha.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(Self {
            alpha,
            alpha_bar,
            sigma,
            labels,
        })
    }

    /// Number of steps `T`.
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn alpha(&self, step: usize) -> f64 {
        self.alpha[self.slot(step)]
    }

    pub fn alpha_bar(&self, step: usize) -> f64 {
        self.alpha_bar[self.slot(step)]
    }

    pub fn sigma(&self, step: usize) -> f64 {
        self.sigma[self.slot(step)]
    }

    pub fn label(&self, step: usize) -> u32 {
        self.labels[self.slot(step)]
    }

    /// What a score model needs to know about `step`.
    pub fn timestep(&self, step: usize) -> Timestep {
        Timestep {
            index: self.label(step),
            alpha_bar: self.alpha_bar(step),
        }
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn check_step(&self, step: usize) -> Result<()> {
        if step == 0 || step > self.len() {
            Err(Error::StepOutOfRange {
                step,
                steps: self.len(),
            })
        } else {
            Ok(())
        }
    }

    fn slot(&self, step: usize) -> usize {
        assert!(
            step >= 1 && step <= self.len(),
            "step {step} outside 1..={}",
            self.len()
        );
        step - 1
    }

    /// Keeps only the given steps (strictly decreasing, each in `1..=T`) and
    /// recombines the α products so that `ᾱ'` at every retained step equals the
    /// original `ᾱ` there.
    pub fn retain(&self, retained: &[u32]) -> Result<Self> {
        if retained.is_empty() {
            return Err(Error::InvalidSchedule("empty retained step set".into()));
        }
        if retained.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidSchedule(
                "retained steps must be strictly decreasing".into(),
            ));
        }
        let ascending: Vec<usize> = retained.iter().rev().map(|&s| s as usize).collect();
        if ascending[0] == 0 || *ascending.last().unwrap() > self.len() {
            return Err(Error::InvalidSchedule(format!(
                "retained steps must lie in 1..={}",
                self.len()
            )));
        }
        let mut alphas = Vec::with_capacity(ascending.len());
        let mut prev = 1.0;
        for &s in &ascending {
            let ab = self.alpha_bar(s);
            alphas.push(ab / prev);
            prev = ab;
        }
        let labels = ascending.iter().map(|&s| self.label(s)).collect();
        Self::from_alphas(alphas, labels)
    }
}

/// Convenience wrapper matching the operation name used in the docs.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<Schedule> {
    Schedule::linear(steps, beta_start, beta_end)
}

/// Serializable description of a schedule: a linear β range plus an optional
/// list of retained steps (strictly decreasing, in base-schedule numbering).
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleDescriptor {
    pub steps: u32,
    pub beta_start: f64,
    pub beta_end: f64,
    pub retained: Option<Vec<u32>>,
}

impl ScheduleDescriptor {
    pub fn linear(steps: u32, beta_start: f64, beta_end: f64) -> Self {
        Self {
            steps,
            beta_start,
            beta_end,
            retained: None,
        }
    }

    /// The standard 1000-step DDPM range `1e-4..0.02`, rescaled by `1000 / T`
    /// so that shorter schedules still end close to pure noise.
    pub fn scaled_linear(steps: u32) -> Self {
        let scale = 1000.0 / steps as f64;
        Self::linear(steps, 1e-4 * scale, (0.02 * scale).min(0.999))
    }

    pub fn with_retained(mut self, retained: Vec<u32>) -> Self {
        self.retained = Some(retained);
        self
    }

    pub fn build(&self) -> Result<Schedule> {
        let base = Schedule::linear(self.steps as usize, self.beta_start, self.beta_end)?;
        match &self.retained {
            Some(r) => base.retain(r),
            None => Ok(base),
        }
    }

    /// Number of sampling steps after sub-sampling.
    pub fn sampling_steps(&self) -> usize {
        self.retained
            .as_ref()
            .map_or(self.steps as usize, |r| r.len())
    }

    /// Canonical little-endian encoding; also the bytes hashed into model ids.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.steps.to_le_bytes());
        out.extend_from_slice(&self.beta_start.to_le_bytes());
        out.extend_from_slice(&self.beta_end.to_le_bytes());
        let retained = self.retained.as_deref().unwrap_or(&[]);
        out.extend_from_slice(&(retained.len() as u32).to_le_bytes());
        for r in retained {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out
    }
}

/// Ways of shortening the bit-stream by touching fewer steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Subsampling {
    /// Keep `steps` evenly spread timesteps (`⌈j·T/steps⌉`, `j = 1..=steps`)
    /// with codebooks of size `k` on every retained step.
    SkipAlternate { steps: usize, k: u32 },
    /// Keep every step but only spend bits on `first..=last`; every other
    /// step gets a single-entry codebook.
    Adapted { k: u32, first: u32, last: u32 },
}

/// Evenly spread retained steps, strictly decreasing.
pub fn spread_steps(total: usize, keep: usize) -> Result<Vec<u32>> {
    if keep == 0 || keep > total {
        return Err(Error::InvalidSchedule(format!(
            "cannot keep {keep} of {total} steps"
        )));
    }
    Ok((1..=keep)
        .rev()
        .map(|j| (j * total).div_ceil(keep) as u32)
        .collect())
}

pub fn subsample_schedule(sched: &Schedule, mode: &Subsampling) -> Result<(Schedule, KSchedule)> {
    match *mode {
        Subsampling::SkipAlternate { steps, k } => {
            let retained = spread_steps(sched.len(), steps)?;
            Ok((sched.retain(&retained)?, KSchedule::Uniform(k)))
        }
        Subsampling::Adapted { k, first, last } => {
            if first < 2 || last < first || last as usize > sched.len() {
                return Err(Error::InvalidSchedule(format!(
                    "active range {first}..={last} must lie within 2..={}",
                    sched.len()
                )));
            }
            Ok((sched.clone(), KSchedule::Adapted { k, first, last }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_step_constant_betas() {
        let s = build_schedule(2, 0.1, 0.1).unwrap();
        assert_eq!(s.alphas(), &[0.9, 0.9]);
        assert!((s.alpha_bar(1) - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar(2) - 0.81).abs() < 1e-15);
        assert!((s.sigma(1) - 0.1f64.sqrt()).abs() < 1e-15);
        assert!((s.sigma(2) - 0.1f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_schedule(1, 0.1, 0.2).is_err());
        assert!(build_schedule(10, 0.0, 0.2).is_err());
        assert!(build_schedule(10, 0.1, 1.0).is_err());
        assert!(build_schedule(10, 0.3, 0.2).is_err());
        assert!(build_schedule(10, f64::NAN, 0.2).is_err());
    }

    #[test]
    fn product_matches_accumulation_loop() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let mut prod = 1.0f64;
        for j in 0..1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * j as f64 / 999.0;
            prod *= 1.0 - beta;
        }
        assert!((s.alpha_bar(1000) - prod).abs() <= 1e-12 * prod);
        assert!(s.alpha_bar(1000) > 0.0);
    }

    #[test]
    fn identities_hold_exactly() {
        let s = build_schedule(300, 1e-4, 0.05).unwrap();
        assert_eq!(s.alpha_bar(1), s.alpha(1));
        for i in 1..=s.len() {
            assert_eq!(s.sigma(i).powi(2), (1.0 - s.alpha(i)).sqrt().powi(2));
            assert!((s.sigma(i).powi(2) + s.alpha(i) - 1.0).abs() < 1e-15);
            if i > 1 {
                assert_eq!(s.alpha_bar(i), s.alpha_bar(i - 1) * s.alpha(i));
                assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
            }
        }
    }

    #[test]
    fn retaining_everything_is_identity() {
        let s = build_schedule(50, 1e-3, 0.1).unwrap();
        let all: Vec<u32> = (1..=50).rev().collect();
        let (r, k) = subsample_schedule(&s, &Subsampling::SkipAlternate { steps: 50, k: 4 }).unwrap();
        assert_eq!(spread_steps(50, 50).unwrap(), all);
        assert_eq!(r.labels(), s.labels());
        for i in 1..=50 {
            assert!((r.alpha_bar(i) - s.alpha_bar(i)).abs() <= 1e-15);
            assert!((r.alpha(i) - s.alpha(i)).abs() <= 1e-15);
        }
        assert_eq!(k, KSchedule::Uniform(4));
    }

    #[test]
    fn skipping_keeps_alpha_bar_at_retained_steps() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let (r, _) = subsample_schedule(&s, &Subsampling::SkipAlternate { steps: 500, k: 16 }).unwrap();
        assert_eq!(r.len(), 500);
        for j in 1..=500 {
            let orig = r.label(j) as usize;
            assert_eq!(orig, 2 * j);
            let rel = (r.alpha_bar(j) - s.alpha_bar(orig)).abs() / s.alpha_bar(orig);
            assert!(rel < 1e-12, "step {j}: rel err {rel}");
            assert!((r.sigma(j).powi(2) + r.alpha(j) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn adapted_mode_keeps_schedule() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let (r, k) = subsample_schedule(
            &s,
            &Subsampling::Adapted {
                k: 256,
                first: 400,
                last: 899,
            },
        )
        .unwrap();
        assert_eq!(r, s);
        assert_eq!(k.size(400), 256);
        assert_eq!(k.size(899), 256);
        assert_eq!(k.size(399), 1);
        assert_eq!(k.size(900), 1);
    }

    #[test]
    fn retain_rejects_empty_and_unordered() {
        let s = build_schedule(10, 1e-3, 0.1).unwrap();
        assert!(s.retain(&[]).is_err());
        assert!(s.retain(&[3, 5]).is_err());
        assert!(s.retain(&[11, 3]).is_err());
    }

    #[test]
    fn scaled_linear_ends_near_noise() {
        for t in [100u32, 200, 1000] {
            let s = ScheduleDescriptor::scaled_linear(t).build().unwrap();
            assert!(s.alpha_bar(t as usize) < 1e-4);
        }
    }
}
