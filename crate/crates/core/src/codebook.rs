//! Seed-derived Gaussian codebooks.
//!
//! Entries are never stored. Entry `k` of the codebook at timestep `i` is
//! regenerated on demand from `(seed, i, k)`:
//!
//! 1. `key = SHA-256(seed as u64 LE ‖ i as u32 LE ‖ k as u32 LE)`.
//! 2. A ChaCha20 keystream (20 rounds, zero nonce, 64-bit block counter from 0)
//!    keyed by `key` is read as 64-bit words, each built from two consecutive
//!    little-endian 32-bit keystream words, low word first.
//! 3. Each word `w` becomes `u = (w >> 11) · 2⁻⁵³`; `u = 0` is rejected and the
//!    next word taken.
//! 4. Uniform pairs `(u1, u2)` become `r·cos(2πu2), r·sin(2πu2)` with
//!    `r = sqrt(-2 ln u1)`.
//! 5. The first `d` normals form the entry.
//!
//! Timesteps run over `2..=T+1`; `T + 1` addresses the initialization codebook.

use std::sync::OnceLock;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Codebook sizes `K_i` for the sampling steps `2..=T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KSchedule {
    Uniform(u32),
    /// `k` entries on `first..=last`, a single entry elsewhere.
    Adapted { k: u32, first: u32, last: u32 },
    /// Explicit sizes for steps `2, 3, ..., T` in that order.
    PerStep(Vec<u32>),
}

impl KSchedule {
    /// `K_i` at sampling step `step`. Step 1 never draws noise and reports 1.
    pub fn size(&self, step: usize) -> u32 {
        if step < 2 {
            return 1;
        }
        match self {
            KSchedule::Uniform(k) => *k,
            KSchedule::Adapted { k, first, last } => {
                if (*first as usize..=*last as usize).contains(&step) {
                    *k
                } else {
                    1
                }
            }
            KSchedule::PerStep(v) => v.get(step - 2).copied().unwrap_or(1),
        }
    }

    pub fn validate(&self, steps: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            KSchedule::Uniform(k) | KSchedule::Adapted { k, .. } if *k == 0 => {
                bad("codebook size must be at least 1".into())
            }
            KSchedule::Adapted { first, last, .. }
                if *first < 2 || last < first || *last as usize > steps =>
            {
                bad(format!(
                    "active range {first}..={last} must lie within 2..={steps}"
                ))
            }
            KSchedule::PerStep(v) if v.len() + 1 != steps => bad(format!(
                "per-step schedule lists {} sizes for {} steps (expected {})",
                v.len(),
                steps,
                steps.saturating_sub(1)
            )),
            KSchedule::PerStep(v) if v.contains(&0) => {
                bad("codebook size must be at least 1".into())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSpec {
    pub seed: u64,
    pub dim: usize,
    /// Number of sampling steps `T`.
    pub steps: usize,
    pub sizes: KSchedule,
    /// `K_{T+1}`, the initialization codebook size.
    pub init_size: u32,
}

impl CodebookSpec {
    pub fn new(seed: u64, dim: usize, steps: usize, sizes: KSchedule) -> Self {
        Self {
            seed,
            dim,
            steps,
            sizes,
            init_size: 1,
        }
    }

    pub fn with_init_size(mut self, init_size: u32) -> Self {
        self.init_size = init_size;
        self
    }

    /// `K_i` for `i` in `2..=T+1`; zero outside that range.
    pub fn size(&self, timestep: usize) -> u32 {
        if timestep == self.steps + 1 {
            self.init_size
        } else if (2..=self.steps).contains(&timestep) {
            self.sizes.size(timestep)
        } else {
            0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        if self.init_size == 0 {
            return Err(Error::InvalidConfig(
                "initialization codebook must have at least one entry".into(),
            ));
        }
        self.sizes.validate(self.steps)
    }

    pub fn check(&self, id: CodebookEntryId) -> Result<()> {
        let size = self.size(id.timestep as usize);
        if id.index == 0 || id.index > size {
            return Err(Error::EntryOutOfBounds {
                timestep: id.timestep as usize,
                index: id.index as usize,
                size: size as usize,
            });
        }
        Ok(())
    }
}

/// Address of one codebook entry; `index` is 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CodebookEntryId {
    pub timestep: u32,
    pub index: u32,
}

impl CodebookEntryId {
    pub fn new(timestep: u32, index: u32) -> Self {
        Self { timestep, index }
    }
}

/// The 256-bit generator key of one entry.
pub fn entry_key(seed: u64, timestep: u32, index: u32) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(timestep.to_le_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

const TWO_POW_NEG_53: f64 = 1.0 / (1u64 << 53) as f64;

fn open_uniform(rng: &mut ChaCha20Rng) -> f64 {
    loop {
        let u = (rng.next_u64() >> 11) as f64 * TWO_POW_NEG_53;
        if u != 0.0 {
            return u;
        }
    }
}

/// Writes the entry for `(seed, timestep, index)` into `out`; its length is
/// the dimension.
pub fn fill_entry(seed: u64, timestep: u32, index: u32, out: &mut [f64]) {
    let mut rng = ChaCha20Rng::from_seed(entry_key(seed, timestep, index));
    for pair in out.chunks_mut(2) {
        let u1 = open_uniform(&mut rng);
        let u2 = open_uniform(&mut rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        pair[0] = r * c;
        if let Some(second) = pair.get_mut(1) {
            *second = r * s;
        }
    }
}

pub fn codebook_entry(spec: &CodebookSpec, id: CodebookEntryId) -> Result<Vec<f64>> {
    spec.check(id)?;
    let mut out = vec![0.0; spec.dim];
    fill_entry(spec.seed, id.timestep, id.index, &mut out);
    Ok(out)
}

/// Read access to per-timestep codebooks, stored row-major (`K_i × d`).
pub trait CodebookSource: Sync {
    fn dim(&self) -> usize;

    /// `K_i` at `timestep`, zero if the timestep has no codebook.
    fn size(&self, timestep: usize) -> usize;

    fn block(&self, timestep: usize) -> Result<&[f64]>;

    fn entry(&self, timestep: usize, index: u32) -> Result<&[f64]> {
        let size = self.size(timestep);
        if index == 0 || index as usize > size {
            return Err(Error::EntryOutOfBounds {
                timestep,
                index: index as usize,
                size,
            });
        }
        let d = self.dim();
        let start = (index as usize - 1) * d;
        Ok(&self.block(timestep)?[start..start + d])
    }
}

/// Lazily generated codebooks for one [`CodebookSpec`]. Each timestep's
/// block is generated on first use and kept.
pub struct Codebooks {
    spec: CodebookSpec,
    cache: Vec<OnceLock<Box<[f64]>>>,
}

impl Codebooks {
    pub fn new(spec: CodebookSpec) -> Result<Self> {
        spec.validate()?;
        let cache = (0..spec.steps + 2).map(|_| OnceLock::new()).collect();
        Ok(Self { spec, cache })
    }

    pub fn spec(&self) -> &CodebookSpec {
        &self.spec
    }

    fn generate(&self, timestep: usize) -> Box<[f64]> {
        let d = self.spec.dim;
        let k = self.spec.size(timestep) as usize;
        let mut block = vec![0.0; k * d].into_boxed_slice();
        for (j, row) in block.chunks_mut(d).enumerate() {
            fill_entry(self.spec.seed, timestep as u32, j as u32 + 1, row);
        }
        block
    }
}

impl CodebookSource for Codebooks {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn size(&self, timestep: usize) -> usize {
        self.spec.size(timestep) as usize
    }

    fn block(&self, timestep: usize) -> Result<&[f64]> {
        if self.size(timestep) == 0 {
            return Err(Error::StepOutOfRange {
                step: timestep,
                steps: self.spec.steps + 1,
            });
        }
        Ok(self.cache[timestep].get_or_init(|| self.generate(timestep)))
    }
}

/// Hand-written codebooks for tests and worked examples. Every timestep
/// without an explicit block falls back to the shared default block.
#[derive(Debug, Clone)]
pub struct FixtureCodebook {
    dim: usize,
    default: Vec<f64>,
    overrides: Vec<(usize, Vec<f64>)>,
}

impl FixtureCodebook {
    pub fn new(entries: &[Vec<f64>]) -> Result<Self> {
        let dim = entries.first().map_or(0, Vec::len);
        Ok(Self {
            dim,
            default: Self::flatten(dim, entries)?,
            overrides: Vec::new(),
        })
    }

    pub fn with_step(mut self, timestep: usize, entries: &[Vec<f64>]) -> Result<Self> {
        let block = Self::flatten(self.dim, entries)?;
        self.overrides.retain(|(t, _)| *t != timestep);
        self.overrides.push((timestep, block));
        Ok(self)
    }

    fn flatten(dim: usize, entries: &[Vec<f64>]) -> Result<Vec<f64>> {
        if dim == 0 {
            return Err(Error::InvalidConfig("fixture entries must be non-empty".into()));
        }
        let mut out = Vec::with_capacity(dim * entries.len());
        for e in entries {
            crate::error::check_dim(dim, e.len())?;
            out.extend_from_slice(e);
        }
        Ok(out)
    }

    fn lookup(&self, timestep: usize) -> &[f64] {
        self.overrides
            .iter()
            .find(|(t, _)| *t == timestep)
            .map_or(&self.default, |(_, b)| b)
    }
}

impl CodebookSource for FixtureCodebook {
    fn dim(&self) -> usize {
        self.dim
    }

    fn size(&self, timestep: usize) -> usize {
        self.lookup(timestep).len() / self.dim
    }

    fn block(&self, timestep: usize) -> Result<&[f64]> {
        Ok(self.lookup(timestep))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub relative_std: f64,
}

/// Mean and relative standard deviation of `‖C_i(k)‖²` over the first
/// `sample` entries at `timestep`. For iid normal entries these approach `d`
/// and `sqrt(2 / d)`.
pub fn norm_concentration_stats(
    spec: &CodebookSpec,
    timestep: usize,
    sample: usize,
) -> Result<NormStats> {
    let size = spec.size(timestep) as usize;
    if sample == 0 || sample > size {
        return Err(Error::InvalidConfig(format!(
            "sample of {sample} entries from a codebook of {size}"
        )));
    }
    let mut row = vec![0.0; spec.dim];
    let norms: Vec<f64> = (1..=sample as u32)
        .map(|k| {
            fill_entry(spec.seed, timestep as u32, k, &mut row);
            row.iter().map(|v| v * v).sum()
        })
        .collect();
    let n = norms.len() as f64;
    let mean = norms.iter().sum::<f64>() / n;
    let var = norms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(NormStats {
        mean,
        relative_std: var.sqrt() / mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn spec(dim: usize, k: u32) -> CodebookSpec {
        CodebookSpec::new(7, dim, 10, KSchedule::Uniform(k))
    }

    #[test]
    fn keystream_matches_reference_block() {
        // First ChaCha20 block for the all-zero key and nonce.
        let mut rng = ChaCha20Rng::from_seed([0u8; 32]);
        let mut bytes = [0u8; 8];
        rng.fill_bytes(&mut bytes);
        assert_eq!(bytes, [0x76, 0xb8, 0xe0, 0xad, 0xa0, 0xf1, 0x3d, 0x90]);
        let mut rng = ChaCha20Rng::from_seed([0u8; 32]);
        assert_eq!(rng.next_u64(), u64::from_le_bytes(bytes));
    }

    #[test]
    fn key_layout() {
        let mut msg = Vec::new();
        msg.extend_from_slice(&7u64.to_le_bytes());
        msg.extend_from_slice(&3u32.to_le_bytes());
        msg.extend_from_slice(&5u32.to_le_bytes());
        let expect: [u8; 32] = Sha256::digest(&msg).into();
        assert_eq!(entry_key(7, 3, 5), expect);
    }

    #[test]
    fn entry_follows_the_generation_recipe() {
        let mut rng = ChaCha20Rng::from_seed(entry_key(11, 4, 2));
        let mut expect = Vec::new();
        while expect.len() < 5 {
            let mut u = [0.0; 2];
            for slot in &mut u {
                *slot = loop {
                    let v = (rng.next_u64() >> 11) as f64 / 9007199254740992.0;
                    if v > 0.0 {
                        break v;
                    }
                };
            }
            let r = (-2.0 * u[0].ln()).sqrt();
            let th = 2.0 * std::f64::consts::PI * u[1];
            expect.push(r * th.cos());
            expect.push(r * th.sin());
        }
        expect.truncate(5);
        let s = CodebookSpec::new(11, 5, 4, KSchedule::Uniform(3));
        let got = codebook_entry(&s, CodebookEntryId::new(4, 2)).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn deterministic_and_prefix_consistent() {
        let s = spec(9, 4);
        let id = CodebookEntryId::new(3, 2);
        let a = codebook_entry(&s, id).unwrap();
        assert_eq!(a, codebook_entry(&s, id).unwrap());
        let mut longer = vec![0.0; 12];
        fill_entry(7, 3, 2, &mut longer);
        assert_eq!(&longer[..9], &a[..]);
    }

    #[test]
    fn bounds_are_enforced() {
        let s = spec(4, 8).with_init_size(2);
        assert!(codebook_entry(&s, CodebookEntryId::new(2, 0)).is_err());
        assert!(codebook_entry(&s, CodebookEntryId::new(2, 9)).is_err());
        assert!(codebook_entry(&s, CodebookEntryId::new(1, 1)).is_err());
        assert!(codebook_entry(&s, CodebookEntryId::new(11, 2)).is_ok());
        assert!(codebook_entry(&s, CodebookEntryId::new(11, 3)).is_err());
        assert!(codebook_entry(&s, CodebookEntryId::new(12, 1)).is_err());
    }

    #[test]
    fn distinct_ids_give_distinct_entries() {
        let s = CodebookSpec::new(3, 8, 100, KSchedule::Uniform(1000));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let a = CodebookEntryId::new(rng.gen_range(2..=100), rng.gen_range(1..=1000));
            let mut b = a;
            while b == a {
                b = CodebookEntryId::new(rng.gen_range(2..=100), rng.gen_range(1..=1000));
            }
            assert_ne!(codebook_entry(&s, a).unwrap(), codebook_entry(&s, b).unwrap());
        }
    }

    #[test]
    fn long_entry_moments() {
        let s = CodebookSpec::new(42, 10_000, 5, KSchedule::Uniform(2));
        let e = codebook_entry(&s, CodebookEntryId::new(3, 1)).unwrap();
        let n = e.len() as f64;
        let mean = e.iter().sum::<f64>() / n;
        let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!(var > 0.9 && var < 1.1, "var {var}");
    }

    #[test]
    fn distinct_entries_are_nearly_uncorrelated() {
        let d = 4096;
        let s = CodebookSpec::new(5, d, 3, KSchedule::Uniform(16));
        for k in 1..16 {
            let a = codebook_entry(&s, CodebookEntryId::new(2, k)).unwrap();
            let b = codebook_entry(&s, CodebookEntryId::new(2, k + 1)).unwrap();
            let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((dot / (na * nb)).abs() < 0.1);
        }
    }

    #[test]
    fn squared_norms_follow_chi_square() {
        let one = CodebookSpec::new(1, 1, 2, KSchedule::Uniform(20_000));
        let st = norm_concentration_stats(&one, 2, 20_000).unwrap();
        assert!((st.relative_std - 2f64.sqrt()).abs() < 0.1 * 2f64.sqrt());

        let d = 64;
        let s = CodebookSpec::new(2, d, 2, KSchedule::Uniform(4096));
        let st = norm_concentration_stats(&s, 2, 4096).unwrap();
        assert!((60.0..=68.0).contains(&st.mean), "{st:?}");
        assert!((0.14..=0.21).contains(&st.relative_std), "{st:?}");
        // Mean within three standard errors of d: sd of the mean is sqrt(2d / n).
        let se = (2.0 * d as f64 / 4096.0).sqrt();
        assert!((st.mean - d as f64).abs() < 3.0 * se);

        let big = CodebookSpec::new(3, 4096, 2, KSchedule::Uniform(256));
        let st = norm_concentration_stats(&big, 2, 256).unwrap();
        assert!(st.relative_std < 0.03, "{st:?}");
    }

    #[test]
    fn k_schedule_sizes() {
        let k = KSchedule::PerStep(vec![4, 1, 8]);
        assert_eq!((k.size(1), k.size(2), k.size(3), k.size(4)), (1, 4, 1, 8));
        assert!(k.validate(4).is_ok());
        assert!(k.validate(5).is_err());
        assert!(KSchedule::Uniform(0).validate(4).is_err());
        assert!(KSchedule::Adapted { k: 4, first: 1, last: 3 }.validate(4).is_err());
    }

    #[test]
    fn cached_blocks_match_direct_generation() {
        let s = spec(6, 5).with_init_size(3);
        let books = Codebooks::new(s.clone()).unwrap();
        for t in 2..=11 {
            for k in 1..=books.size(t) as u32 {
                let direct = codebook_entry(&s, CodebookEntryId::new(t as u32, k)).unwrap();
                assert_eq!(books.entry(t, k).unwrap(), &direct[..]);
            }
        }
        assert!(books.block(1).is_err());
        assert!(books.entry(2, 6).is_err());
    }

    #[test]
    fn fixture_overrides() {
        let f = FixtureCodebook::new(&[vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap()
            .with_step(5, &[vec![2.0, 2.0]])
            .unwrap();
        assert_eq!(f.size(3), 2);
        assert_eq!(f.size(5), 1);
        assert_eq!(f.entry(3, 2).unwrap(), &[0.0, 1.0]);
        assert_eq!(f.entry(5, 1).unwrap(), &[2.0, 2.0]);
        assert!(FixtureCodebook::new(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
