use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::{mean_std, mse, psnr, sliced_wasserstein};
use crate::analytic::{mmse_restorer, GmmLikelihood, GmmModel, GmmParams, LinearObservation};
use crate::codebook::{CodebookSpec, Codebooks, KSchedule};
use crate::codec::{edit_decode, Codec, CodecConfig, EditRequest};
use crate::error::{Error, Result};
use crate::linear::LinearOp;
use crate::sampler::{ddpm_sample, Conditioning, Sampler, SelectionRule};
use crate::schedule::ScheduleDescriptor;

/// Number of random directions in every sliced-Wasserstein column.
pub const SW_PROJECTIONS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    GenerationVsK,
    RateDistortionSweep,
    PosteriorInpainting,
    Restoration,
    Guidance,
    Editing,
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "generation_vs_K" | "generation_vs_k" | "generation" => Self::GenerationVsK,
            "rate_distortion_sweep" | "rate_distortion" => Self::RateDistortionSweep,
            "posterior_inpainting" | "inpainting" => Self::PosteriorInpainting,
            "restoration" => Self::Restoration,
            "guidance" => Self::Guidance,
            "editing" => Self::Editing,
            other => return Err(Error::InvalidConfig(format!("unknown experiment '{other}'"))),
        })
    }
}

/// One configuration of the sweep. Fields a given experiment does not use
/// are ignored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub steps: u32,
    pub k: u32,
    pub depth: u32,
    pub coeffs: u32,
    /// Candidate-subset size for guidance and posterior sampling; 0 scans
    /// the whole codebook.
    pub ktilde: u32,
    pub lambda: f64,
    /// Edit step; 0 means `0.6 T`.
    pub t_edit: u32,
}

impl GridPoint {
    pub fn new(steps: u32, k: u32) -> Self {
        Self {
            steps,
            k,
            depth: 1,
            coeffs: 0,
            ktilde: 0,
            lambda: 0.0,
            t_edit: 0,
        }
    }

    fn sort_key(&self) -> (u32, u32, u32, u32, u32, u64, u32) {
        (
            self.steps,
            self.k,
            self.depth,
            self.coeffs,
            self.ktilde,
            self.lambda.to_bits(),
            self.t_edit,
        )
    }

    fn edit_step(&self) -> usize {
        if self.t_edit == 0 {
            (0.6 * self.steps as f64).round() as usize
        } else {
            self.t_edit as usize
        }
    }
}

impl fmt::Display for GridPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T={} K={} M={} C={}", self.steps, self.k, self.depth, self.coeffs)?;
        if self.ktilde > 0 {
            write!(f, " Kt={}", self.ktilde)?;
        }
        if self.lambda != 0.0 {
            write!(f, " lambda={}", self.lambda)?;
        }
        if self.t_edit > 0 {
            write!(f, " t_edit={}", self.t_edit)?;
        }
        Ok(())
    }
}

/// Guidance rule for the guidance experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Guidance {
    Ccg,
    Ccfg,
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub params: GmmParams,
    pub grid: Vec<GridPoint>,
    pub samples: usize,
    pub seed: u64,
    /// Peak-to-peak signal range used for PSNR; `None` derives it from the
    /// prior.
    pub range: Option<f64>,
    /// Observation noise for the restoration experiment.
    pub noise_std: f64,
    /// Target class for guidance and editing; editing starts from `src`.
    pub target: u32,
    pub src: u32,
    pub guidance: Guidance,
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, params: GmmParams, grid: Vec<GridPoint>, samples: usize, seed: u64) -> Self {
        Self {
            kind,
            params,
            grid,
            samples,
            seed,
            range: None,
            noise_std: 0.5,
            target: 1,
            src: 0,
            guidance: Guidance::Ccg,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("experiment grid is empty".into()));
        }
        if self.samples == 0 {
            return Err(Error::InvalidConfig("sample count must be at least 1".into()));
        }
        if self.range.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            return Err(Error::InvalidConfig("range must be positive".into()));
        }
        if matches!(self.kind, ExperimentKind::Guidance | ExperimentKind::Editing) && self.params.labels.is_none() {
            return Err(Error::InvalidConfig("guidance and editing need a labelled mixture".into()));
        }
        for p in &self.grid {
            if p.steps < 2 || p.k == 0 {
                return Err(Error::InvalidConfig(format!("bad grid point {p}")));
            }
        }
        Ok(())
    }

    /// The declared PSNR range: the explicit value, or the widest per-axis
    /// span of `μ ± 3σ` over the mixture components.
    pub fn psnr_range(&self) -> f64 {
        self.range.unwrap_or_else(|| {
            let p = &self.params;
            (0..p.dim())
                .map(|a| {
                    let hi = (0..p.components())
                        .map(|j| p.means[j][a] + 3.0 * p.variances[j][a].sqrt())
                        .fold(f64::NEG_INFINITY, f64::max);
                    let lo = (0..p.components())
                        .map(|j| p.means[j][a] - 3.0 * p.variances[j][a].sqrt())
                        .fold(f64::INFINITY, f64::min);
                    hi - lo
                })
                .fold(0.0, f64::max)
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub config: String,
    pub payload_bits: u64,
    pub mse: f64,
    pub mse_std: f64,
    pub psnr: f64,
    pub sliced_wasserstein: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub psnr_range: f64,
}

pub const CSV_COLUMNS: [&str; 8] = [
    "config",
    "payload_bits",
    "mse",
    "mse_std",
    "psnr",
    "psnr_range",
    "sliced_wasserstein",
    "wall_time",
];

impl MetricReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let wrap = |e: csv::Error| Error::Io(std::io::Error::other(e));
        out.write_record(CSV_COLUMNS).map_err(wrap)?;
        for r in &self.rows {
            out.write_record([
                r.config.clone(),
                r.payload_bits.to_string(),
                r.mse.to_string(),
                r.mse_std.to_string(),
                r.psnr.to_string(),
                self.psnr_range.to_string(),
                r.sliced_wasserstein.to_string(),
                format!("{:.6}", r.wall_time),
            ])
            .map_err(wrap)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

const REFERENCE_STREAM: u64 = u64::MAX;
const PROJECTION_STREAM: u64 = u64::MAX - 1;

struct Outcome {
    payload_bits: u64,
    /// Per-sample error values.
    errors: Vec<f64>,
    outputs: Vec<Vec<f64>>,
}

enum Job {
    Point(GridPoint),
    Ddpm(u32),
}

impl Job {
    fn key(&self) -> ((u32, u32, u32, u32, u32, u64, u32), bool) {
        match self {
            Job::Point(p) => (p.sort_key(), false),
            Job::Ddpm(t) => ((*t, u32::MAX, 0, 0, 0, 0, 0), true),
        }
    }

    fn label(&self) -> String {
        match self {
            Job::Point(p) => p.to_string(),
            Job::Ddpm(t) => format!("T={t} ddpm"),
        }
    }
}

/// Runs every grid point (in parallel) and returns rows sorted by
/// configuration. Reports are reproducible from `(spec, seed)`; only
/// `wall_time` varies between runs.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricReport> {
    spec.validate()?;
    let model = GmmModel::new(spec.params.clone())?;
    let range = spec.psnr_range();

    let mut jobs: Vec<Job> = spec.grid.iter().copied().map(Job::Point).collect();
    if spec.kind == ExperimentKind::GenerationVsK {
        let mut ts: Vec<u32> = spec.grid.iter().map(|p| p.steps).collect();
        ts.sort_unstable();
        ts.dedup();
        jobs.extend(ts.into_iter().map(Job::Ddpm));
    }
    jobs.sort_by(|a, b| a.key().partial_cmp(&b.key()).unwrap());
    jobs.dedup_by(|a, b| a.key() == b.key());

    let reference = reference_samples(spec)?;
    let rows = jobs
        .par_iter()
        .enumerate()
        .map(|(i, job)| {
            let start = Instant::now();
            let mut rng = rng_for(spec.seed, i as u64);
            let out = match job {
                Job::Ddpm(t) => run_ddpm(spec, &model, *t, &mut rng)?,
                Job::Point(p) => run_point(spec, &model, p, &mut rng)?,
            };
            let (m, s) = mean_std(&out.errors);
            let sw = sliced_wasserstein(
                &out.outputs,
                &reference,
                SW_PROJECTIONS,
                &mut rng_for(spec.seed, PROJECTION_STREAM),
            )?;
            Ok(MetricRow {
                config: job.label(),
                payload_bits: out.payload_bits,
                mse: m,
                mse_std: s,
                psnr: psnr(m, range),
                sliced_wasserstein: sw,
                wall_time: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        rows,
        psnr_range: range,
    })
}

/// Draws the distribution each experiment's outputs are compared against.
fn reference_samples(spec: &ExperimentSpec) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng_for(spec.seed, REFERENCE_STREAM);
    let n = spec.samples.max(2);
    match spec.kind {
        ExperimentKind::Guidance | ExperimentKind::Editing => {
            (0..n).map(|_| spec.params.sample_class(&mut rng, spec.target)).collect()
        }
        _ => Ok((0..n).map(|_| spec.params.sample(&mut rng)).collect()),
    }
}

fn distance_to_mean(outputs: &[Vec<f64>], params: &GmmParams) -> Vec<f64> {
    let d = params.dim();
    let mean: Vec<f64> = (0..d)
        .map(|a| params.weights.iter().zip(&params.means).map(|(w, m)| w * m[a]).sum())
        .collect();
    outputs.iter().map(|o| mse(o, &mean).unwrap_or(f64::NAN)).collect()
}

fn run_ddpm(spec: &ExperimentSpec, model: &GmmModel, steps: u32, rng: &mut dyn RngCore) -> Result<Outcome> {
    let sched = ScheduleDescriptor::scaled_linear(steps).build()?;
    let outputs = (0..spec.samples)
        .map(|_| ddpm_sample(model, &sched, &Conditioning::none(), rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(Outcome {
        payload_bits: 0,
        errors: distance_to_mean(&outputs, &spec.params),
        outputs,
    })
}

/// `1 - p(target | x)` at the clean end of the process.
fn class_miss(model: &GmmModel, x: &[f64], class: u32) -> Result<f64> {
    let t = crate::model::Timestep {
        index: 0,
        alpha_bar: 1.0,
    };
    Ok(1.0 - model.class_logprob(x, t, class)?.exp())
}

fn run_point(spec: &ExperimentSpec, model: &GmmModel, p: &GridPoint, rng: &mut dyn RngCore) -> Result<Outcome> {
    let d = spec.params.dim();
    let n = spec.samples;
    let config = CodecConfig::uniform(p.steps, p.k, spec.seed).with_pursuit(p.depth, p.coeffs.max(if p.depth > 1 { 2 } else { 0 }));
    let subset = (p.ktilde > 0).then_some(p.ktilde);
    let mut outputs = Vec::with_capacity(n);
    let mut errors = Vec::with_capacity(n);
    let mut payload_bits = 0;
    match spec.kind {
        ExperimentKind::GenerationVsK => {
            let desc = ScheduleDescriptor::scaled_linear(p.steps);
            let sched = desc.build()?;
            let books = Codebooks::new(
                CodebookSpec::new(spec.seed, d, sched.len(), KSchedule::Uniform(p.k)).with_init_size(p.k),
            )?;
            let sampler = Sampler::new(model, &sched, &books)?;
            for _ in 0..n {
                outputs.push(sampler.run(&SelectionRule::Random, &Conditioning::none(), rng)?.output);
            }
            errors = distance_to_mean(&outputs, &spec.params);
        }
        ExperimentKind::RateDistortionSweep => {
            let codec = Codec::new(config, d)?;
            payload_bits = codec.config().payload_bits();
            for _ in 0..n {
                let x0 = spec.params.sample(rng);
                let c = codec.compress(&x0, model, &Conditioning::none())?;
                errors.push(mse(&x0, &c.reconstruction)?);
                outputs.push(c.reconstruction);
            }
        }
        ExperimentKind::PosteriorInpainting => {
            let codec = Codec::new(config, d)?;
            payload_bits = codec.config().payload_bits();
            let op = LinearOp::mask(d, (0..d.div_ceil(2)).collect())?;
            for _ in 0..n {
                let x0 = spec.params.sample(rng);
                let obs = LinearObservation::new(op.clone(), op.apply(&x0)?, 0.0)?;
                let rule = SelectionRule::PosteriorLoss {
                    provider: Arc::new(GmmLikelihood {
                        params: spec.params.clone(),
                        obs,
                    }),
                    subset,
                };
                let c = codec.encode(&rule, model, &Conditioning::none(), rng)?;
                errors.push(mse(&x0, &c.reconstruction)?);
                outputs.push(c.reconstruction);
            }
        }
        ExperimentKind::Restoration => {
            let codec = Codec::new(config, d)?;
            payload_bits = codec.config().payload_bits();
            let prior = spec.params.clone();
            let quality = Arc::new(move |x: &[f64]| -prior.log_density(x, 1.0).unwrap_or(f64::INFINITY));
            for _ in 0..n {
                let x0 = spec.params.sample(rng);
                let y: Vec<f64> = x0
                    .iter()
                    .map(|v| v + spec.noise_std * rand::Rng::sample::<f64, _>(&mut *rng, rand_distr::StandardNormal))
                    .collect();
                let obs = LinearObservation::new(LinearOp::identity(d), y, spec.noise_std)?;
                let rule = SelectionRule::Restoration {
                    reference: mmse_restorer(&obs, &spec.params)?,
                    lambda: p.lambda,
                    quality: quality.clone(),
                };
                let c = codec.encode(&rule, model, &Conditioning::none(), rng)?;
                errors.push(mse(&x0, &c.reconstruction)?);
                outputs.push(c.reconstruction);
            }
        }
        ExperimentKind::Guidance => {
            let codec = Codec::new(config, d)?;
            payload_bits = codec.config().payload_bits();
            let condition = spec.target.to_string();
            let ktilde = if p.ktilde == 0 { p.k } else { p.ktilde };
            let rule = match spec.guidance {
                Guidance::Ccfg => SelectionRule::Ccfg { condition, ktilde },
                Guidance::Ccg => SelectionRule::Ccg {
                    classifier: Arc::new(model.clone()),
                    condition,
                    ktilde,
                },
            };
            for _ in 0..n {
                let c = codec.encode(&rule, model, &Conditioning::none(), rng)?;
                errors.push(class_miss(model, &c.reconstruction, spec.target)?.powi(2));
                outputs.push(c.reconstruction);
            }
        }
        ExperimentKind::Editing => {
            let codec = Codec::new(config, d)?;
            payload_bits = codec.config().payload_bits();
            let src = spec.src.to_string();
            let dst = spec.target.to_string();
            let t_edit = p.edit_step().clamp(1, p.steps as usize);
            for _ in 0..n {
                let x0 = spec.params.sample_class(rng, spec.src)?;
                let c = codec.compress(&x0, model, &Conditioning::fixed(src.clone()))?;
                let edited = edit_decode(
                    &EditRequest {
                        stream: c.stream,
                        src: Some(src.clone()),
                        dst: Some(dst.clone()),
                        t_edit,
                    },
                    model,
                )?;
                errors.push(class_miss(model, &edited, spec.target)?.powi(2));
                outputs.push(edited);
            }
        }
    }
    Ok(Outcome {
        payload_bits,
        errors,
        outputs,
    })
}
