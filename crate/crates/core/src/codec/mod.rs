//! Compression: trajectories written as codebook indices.
//!
//! Every stream-producing run starts from the single initialization entry
//! `C_{T+1}(1)`, so a stream plus the score model is all a decoder needs.
//! The reconstruction returned by the encoder is exactly what the decoder
//! produces; "lossless" refers to that replay, not to `x_0`.

mod bitstream;
mod pursuit;
mod rate;

pub use bitstream::{model_id, BitStream, Header, StepCode, MAGIC, VERSION};
pub use pursuit::{combine, gammas, mp_refine, pursuit_noise, PursuitOutcome};
pub use rate::{bpp, index_bits, rate_bits};

use rand::RngCore;

use crate::codebook::{CodebookSpec, Codebooks, KSchedule};
use crate::error::{check_dim, Error, Result};
use crate::model::ScoreModel;
use crate::sampler::{Conditioning, Pursuit, Sampler, SelectionRule, Trajectory};
use crate::schedule::{Schedule, ScheduleDescriptor};

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub schedule: ScheduleDescriptor,
    /// Codebook sizes over the sampling steps (after any sub-sampling).
    pub sizes: KSchedule,
    pub pursuit: Pursuit,
    pub seed: u64,
}

impl CodecConfig {
    /// `steps` scaled-linear steps with `k` entries per codebook.
    pub fn uniform(steps: u32, k: u32, seed: u64) -> Self {
        Self {
            schedule: ScheduleDescriptor::scaled_linear(steps),
            sizes: KSchedule::Uniform(k),
            pursuit: Pursuit::NONE,
            seed,
        }
    }

    pub fn with_pursuit(mut self, depth: u32, coeffs: u32) -> Self {
        self.pursuit = Pursuit { depth, coeffs };
        self
    }

    pub fn payload_bits(&self) -> u64 {
        rate_bits(
            &self.sizes,
            self.schedule.sampling_steps(),
            self.pursuit.depth,
            self.pursuit.coeffs,
        )
    }

    pub fn validate(&self) -> Result<()> {
        Pursuit::new(self.pursuit.depth, self.pursuit.coeffs)?;
        self.sizes.validate(self.schedule.sampling_steps())
    }

    fn from_header(h: &Header) -> Self {
        Self {
            schedule: h.schedule.clone(),
            sizes: h.sizes.clone(),
            pursuit: Pursuit {
                depth: h.depth,
                coeffs: h.coeffs,
            },
            seed: h.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Compressed {
    pub stream: BitStream,
    pub reconstruction: Vec<f64>,
    pub trajectory: Trajectory,
}

/// A configured encoder/decoder with its codebooks generated once.
pub struct Codec {
    config: CodecConfig,
    sched: Schedule,
    books: Codebooks,
    dim: usize,
}

impl Codec {
    pub fn new(config: CodecConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let sched = config.schedule.build()?;
        let spec = CodebookSpec::new(config.seed, dim, sched.len(), config.sizes.clone());
        let books = Codebooks::new(spec)?;
        Ok(Self {
            config,
            sched,
            books,
            dim,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.sched
    }

    pub fn codebooks(&self) -> &Codebooks {
        &self.books
    }

    pub fn sampler<'a>(&'a self, model: &'a dyn ScoreModel) -> Result<Sampler<'a>> {
        check_dim(self.dim, model.dim())?;
        Sampler::new(model, &self.sched, &self.books)
    }

    fn header(&self, model: &dyn ScoreModel) -> Header {
        Header {
            dim: self.dim as u32,
            schedule: self.config.schedule.clone(),
            sizes: self.config.sizes.clone(),
            depth: self.config.pursuit.depth,
            coeffs: self.config.pursuit.coeffs,
            seed: self.config.seed,
            model_id: model_id(model.fingerprint(), &self.config.schedule),
            payload_bits: 0,
        }
    }

    /// Runs `rule` and seals the chosen indices into a stream.
    pub fn encode(
        &self,
        rule: &SelectionRule,
        model: &dyn ScoreModel,
        cond: &Conditioning,
        rng: &mut dyn RngCore,
    ) -> Result<Compressed> {
        match rule {
            SelectionRule::Compression { pursuit, .. } if *pursuit != self.config.pursuit => {
                return Err(Error::InvalidConfig(
                    "rule pursuit settings differ from the codec configuration".into(),
                ))
            }
            SelectionRule::Compression { .. } => {}
            _ if self.config.pursuit.depth > 1 => {
                return Err(Error::InvalidConfig(
                    "matching pursuit applies to the compression rule only".into(),
                ))
            }
            _ => {}
        }
        let trajectory = self.sampler(model)?.run(rule, cond, rng)?;
        debug_assert_eq!(trajectory.init_index, 1);
        let stream = BitStream::encode(self.header(model), &trajectory.codes())?;
        Ok(Compressed {
            stream,
            reconstruction: trajectory.output.clone(),
            trajectory,
        })
    }

    pub fn compress(&self, x0: &[f64], model: &dyn ScoreModel, cond: &Conditioning) -> Result<Compressed> {
        check_dim(self.dim, x0.len())?;
        let rule = SelectionRule::Compression {
            target: x0.to_vec(),
            pursuit: self.config.pursuit,
        };
        // The compression rule never draws, so the stream is unused.
        let mut idle = rand::rngs::mock::StepRng::new(0, 0);
        self.encode(&rule, model, cond, &mut idle)
    }

    pub fn decompress(&self, stream: &BitStream, model: &dyn ScoreModel, cond: &Conditioning) -> Result<Vec<f64>> {
        check_stream(stream, model)?;
        if CodecConfig::from_header(&stream.header) != self.config || stream.header.dim as usize != self.dim {
            return Err(Error::InvalidConfig(
                "stream was written with a different codec configuration".into(),
            ));
        }
        let codes = stream.decode_codes()?;
        self.sampler(model)?
            .replay(1, &codes, self.config.pursuit.coeffs, cond)
    }
}

fn check_stream(stream: &BitStream, model: &dyn ScoreModel) -> Result<()> {
    let h = &stream.header;
    check_dim(h.dim as usize, model.dim())?;
    let found = model_id(model.fingerprint(), &h.schedule);
    if found != h.model_id {
        return Err(Error::ModelMismatch {
            expected: h.model_id,
            found,
        });
    }
    Ok(())
}

/// Encodes `x0` with the compression rule.
pub fn compress(x0: &[f64], config: &CodecConfig, model: &dyn ScoreModel) -> Result<Compressed> {
    Codec::new(config.clone(), x0.len())?.compress(x0, model, &Conditioning::none())
}

/// Replays a stream; needs nothing but the stream and the model.
pub fn decompress(stream: &BitStream, model: &dyn ScoreModel) -> Result<Vec<f64>> {
    decompress_conditioned(stream, model, &Conditioning::none())
}

pub fn decompress_conditioned(stream: &BitStream, model: &dyn ScoreModel, cond: &Conditioning) -> Result<Vec<f64>> {
    check_stream(stream, model)?;
    let codec = Codec::new(CodecConfig::from_header(&stream.header), stream.header.dim as usize)?;
    codec.decompress(stream, model, cond)
}

/// Decode under `src` on steps above `t_edit` and under `dst` from `t_edit`
/// down.
#[derive(Debug, Clone)]
pub struct EditRequest {
    pub stream: BitStream,
    pub src: Option<String>,
    pub dst: Option<String>,
    pub t_edit: usize,
}

pub fn edit_decode(req: &EditRequest, model: &dyn ScoreModel) -> Result<Vec<f64>> {
    if !model.supports_conditioning() {
        return Err(Error::Model("editing needs a conditional model".into()));
    }
    let steps = req.stream.header.sampling_steps();
    if req.t_edit == 0 || req.t_edit > steps {
        return Err(Error::InvalidConfig(format!(
            "edit step {} outside 1..={steps}",
            req.t_edit
        )));
    }
    let cond = Conditioning::switch(req.src.clone(), req.dst.clone(), req.t_edit);
    decompress_conditioned(&req.stream, model, &cond)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{GmmModel, GmmParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> GmmModel {
        GmmModel::new(
            GmmParams::new(
                vec![0.5, 0.5],
                vec![vec![-1.0, 0.5, 0.0], vec![1.0, -0.5, 0.5]],
                vec![vec![0.2, 0.3, 0.4], vec![0.3, 0.2, 0.1]],
                Some(vec![0, 1]),
            )
            .unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_entry_codebooks_give_an_empty_payload() {
        let m = model();
        let cfg = CodecConfig::uniform(30, 1, 4);
        let a = compress(&[0.1, 0.2, 0.3], &cfg, &m).unwrap();
        let b = compress(&[-3.0, 2.0, 1.0], &cfg, &m).unwrap();
        assert!(a.stream.payload.is_empty());
        assert_eq!(a.stream.header.payload_bits, 0);
        assert_eq!(a.reconstruction, b.reconstruction);
        assert_eq!(decompress(&a.stream, &m).unwrap(), a.reconstruction);
    }

    #[test]
    fn replay_is_exact_through_serialization() {
        let m = model();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for cfg in [
            CodecConfig::uniform(40, 64, 9),
            CodecConfig::uniform(40, 16, 9).with_pursuit(3, 4),
        ] {
            let codec = Codec::new(cfg.clone(), 3).unwrap();
            for _ in 0..5 {
                let x0 = m.params().sample(&mut rng);
                let c = codec.compress(&x0, &m, &Conditioning::none()).unwrap();
                assert_eq!(c.stream.header.payload_bits, cfg.payload_bits());
                let parsed = BitStream::from_bytes(&c.stream.to_bytes()).unwrap();
                assert_eq!(decompress(&parsed, &m).unwrap(), c.reconstruction);
            }
        }
    }

    #[test]
    fn wrong_model_or_dimension_is_rejected() {
        let m = model();
        let c = compress(&[0.0, 0.0, 0.0], &CodecConfig::uniform(10, 4, 1), &m).unwrap();
        let other = GmmModel::new(GmmParams::standard_normal(3)).unwrap();
        assert!(matches!(decompress(&c.stream, &other), Err(Error::ModelMismatch { .. })));
        let wide = GmmModel::new(GmmParams::standard_normal(4)).unwrap();
        assert!(matches!(decompress(&c.stream, &wide), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn flipping_an_index_changes_the_output() {
        let m = model();
        let cfg = CodecConfig::uniform(30, 8, 2);
        let c = compress(&[0.5, -0.5, 0.2], &cfg, &m).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let mut codes = c.stream.decode_codes().unwrap();
            let n = rng.gen_range(0..codes.len());
            codes[n].index = codes[n].index % 8 + 1;
            let s = BitStream::encode(c.stream.header.clone(), &codes).unwrap();
            let out = decompress(&s, &m).unwrap();
            let mse: f64 = out.iter().zip(&c.reconstruction).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(mse > 0.0);
        }
    }

    #[test]
    fn edit_boundaries() {
        let m = model();
        let cfg = CodecConfig::uniform(30, 16, 5);
        let codec = Codec::new(cfg, 3).unwrap();
        let src = Conditioning::fixed("0");
        let c = codec.compress(&[-1.0, 0.5, 0.0], &m, &src).unwrap();
        let same = EditRequest {
            stream: c.stream.clone(),
            src: Some("0".into()),
            dst: Some("0".into()),
            t_edit: 12,
        };
        assert_eq!(edit_decode(&same, &m).unwrap(), decompress_conditioned(&c.stream, &m, &src).unwrap());
        let all = EditRequest {
            dst: Some("1".into()),
            t_edit: 30,
            ..same.clone()
        };
        let under_dst = decompress_conditioned(&c.stream, &m, &Conditioning::fixed("1")).unwrap();
        assert_eq!(edit_decode(&all, &m).unwrap(), under_dst);
        assert!(edit_decode(&EditRequest { t_edit: 0, ..same.clone() }, &m).is_err());
        assert!(edit_decode(&EditRequest { t_edit: 31, ..same }, &m).is_err());
    }
}
