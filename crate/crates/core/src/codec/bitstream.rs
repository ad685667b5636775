//! The compressed container.
//!
//! Header, all integers and floats little-endian:
//!
//! | field | type |
//! |---|---|
//! | magic `DDCM` | 4 bytes |
//! | version (1) | u16 |
//! | dimension `d` | u32 |
//! | base steps `T` | u32 |
//! | `beta_start`, `beta_end` | f64, f64 |
//! | retained count `n`, then `n` retained steps | u32, n × u32 |
//! | codebook sizes | u8 tag, then fields |
//! | pursuit depth `M`, coefficient levels `C` | u32, u32 |
//! | codebook seed | u64 |
//! | model id | u64 |
//! | payload length in bits | u64 |
//! | checksum: first 4 bytes of SHA-256 over all preceding header bytes | 4 bytes |
//!
//! Codebook size tags: `0` uniform (`K` u32), `1` adapted (`K`, first, last as
//! u32), `2` per step (count u32, then one u32 per step `2..=T'`).
//!
//! The payload packs bits most-significant first. For each sampling step
//! `i = T'` down to `2` with `K_i > 1` it holds `k − 1` in `⌈log₂K_i⌉` bits,
//! then for every pursuit round `2..=M` another `k − 1` in `⌈log₂K_i⌉` bits
//! followed by `c − 1` in `⌈log₂C⌉` bits. The final byte is zero-padded.

use sha2::{Digest, Sha256};

use super::rate::{index_bits, rate_bits};
use crate::codebook::KSchedule;
use crate::error::{Error, Result};
use crate::schedule::ScheduleDescriptor;

pub const MAGIC: &[u8; 4] = b"DDCM";
pub const VERSION: u16 = 1;

/// Choice made at one sampling step: the first index and `(k, c)` for
/// each further pursuit round.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StepCode {
    pub index: u32,
    pub refinements: Vec<(u32, u32)>,
}

impl StepCode {
    pub fn single(index: u32) -> Self {
        Self {
            index,
            refinements: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub dim: u32,
    pub schedule: ScheduleDescriptor,
    pub sizes: KSchedule,
    pub depth: u32,
    pub coeffs: u32,
    pub seed: u64,
    pub model_id: u64,
    pub payload_bits: u64,
}

impl Header {
    pub fn sampling_steps(&self) -> usize {
        self.schedule.sampling_steps()
    }

    pub fn expected_bits(&self) -> u64 {
        rate_bits(&self.sizes, self.sampling_steps(), self.depth, self.coeffs)
    }

    fn body_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.dim.to_le_bytes());
        out.extend_from_slice(&self.schedule.to_bytes());
        match &self.sizes {
            KSchedule::Uniform(k) => {
                out.push(0);
                out.extend_from_slice(&k.to_le_bytes());
            }
            KSchedule::Adapted { k, first, last } => {
                out.push(1);
                for v in [k, first, last] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            KSchedule::PerStep(v) => {
                out.push(2);
                out.extend_from_slice(&(v.len() as u32).to_le_bytes());
                for k in v {
                    out.extend_from_slice(&k.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&self.depth.to_le_bytes());
        out.extend_from_slice(&self.coeffs.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.model_id.to_le_bytes());
        out.extend_from_slice(&self.payload_bits.to_le_bytes());
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::CorruptHeader(m));
        if self.dim == 0 {
            return bad("zero dimension".into());
        }
        if self.schedule.build().is_err() {
            return bad("invalid schedule descriptor".into());
        }
        if let Err(e) = self.sizes.validate(self.sampling_steps()) {
            return bad(e.to_string());
        }
        if self.depth == 0 || (self.depth > 1 && self.coeffs < 2) {
            return bad(format!("invalid pursuit depth {} / levels {}", self.depth, self.coeffs));
        }
        if self.payload_bits != self.expected_bits() {
            return bad(format!(
                "payload length {} disagrees with the configuration ({})",
                self.payload_bits,
                self.expected_bits()
            ));
        }
        Ok(())
    }
}

fn checksum(bytes: &[u8]) -> [u8; 4] {
    Sha256::digest(bytes)[..4].try_into().unwrap()
}

/// 64-bit identifier binding a model fingerprint to a schedule.
pub fn model_id(fingerprint: u64, schedule: &ScheduleDescriptor) -> u64 {
    let mut h = Sha256::new();
    h.update(fingerprint.to_le_bytes());
    h.update(schedule.to_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BitStream {
    pub header: Header,
    pub payload: Vec<u8>,
}

struct BitWriter {
    bytes: Vec<u8>,
    bits: u64,
}

impl BitWriter {
    fn push(&mut self, value: u32, width: u32) {
        for b in (0..width).rev() {
            if self.bits % 8 == 0 {
                self.bytes.push(0);
            }
            if (value >> b) & 1 == 1 {
                *self.bytes.last_mut().unwrap() |= 0x80 >> (self.bits % 8);
            }
            self.bits += 1;
        }
    }
}

struct BitReader<'a> {
    bytes: &'a [u8],
    limit: u64,
    pos: u64,
}

impl BitReader<'_> {
    fn read(&mut self, width: u32) -> Result<u32> {
        if self.pos + width as u64 > self.limit {
            return Err(Error::Truncated(format!(
                "payload ends after {} bits, needed {}",
                self.limit,
                self.pos + width as u64
            )));
        }
        let mut v = 0u32;
        for _ in 0..width {
            let byte = self.bytes[(self.pos / 8) as usize];
            v = (v << 1) | ((byte >> (7 - self.pos % 8)) & 1) as u32;
            self.pos += 1;
        }
        Ok(v)
    }
}

impl BitStream {
    /// Packs `codes` (one per sampling step, ordered `T'` down to `2`).
    /// Steps with a single-entry codebook are skipped.
    pub fn encode(mut header: Header, codes: &[StepCode]) -> Result<Self> {
        let steps = header.sampling_steps();
        if codes.len() + 1 != steps {
            return Err(Error::InvalidConfig(format!(
                "{} step codes for {} sampling steps",
                codes.len(),
                steps
            )));
        }
        let coeff_bits = index_bits(header.coeffs);
        let mut w = BitWriter {
            bytes: Vec::new(),
            bits: 0,
        };
        for (code, step) in codes.iter().zip((2..=steps).rev()) {
            let k = header.sizes.size(step);
            let check = |idx: u32| {
                if idx == 0 || idx > k {
                    Err(Error::EntryOutOfBounds {
                        timestep: step,
                        index: idx as usize,
                        size: k as usize,
                    })
                } else {
                    Ok(())
                }
            };
            check(code.index)?;
            if k == 1 {
                if !code.refinements.is_empty() {
                    return Err(Error::InvalidConfig(format!(
                        "step {step} has one entry but carries pursuit rounds"
                    )));
                }
                continue;
            }
            if code.refinements.len() + 1 != header.depth as usize {
                return Err(Error::InvalidConfig(format!(
                    "step {step} carries {} pursuit rounds, expected {}",
                    code.refinements.len() + 1,
                    header.depth
                )));
            }
            let bits = index_bits(k);
            w.push(code.index - 1, bits);
            for &(idx, c) in &code.refinements {
                check(idx)?;
                if c == 0 || c > header.coeffs {
                    return Err(Error::InvalidConfig(format!("coefficient id {c} out of range")));
                }
                w.push(idx - 1, bits);
                w.push(c - 1, coeff_bits);
            }
        }
        header.payload_bits = w.bits;
        header.validate()?;
        Ok(Self {
            header,
            payload: w.bytes,
        })
    }

    /// Unpacks one code per sampling step, ordered `T'` down to `2`.
    pub fn decode_codes(&self) -> Result<Vec<StepCode>> {
        let h = &self.header;
        let expected = h.expected_bits();
        let mut r = BitReader {
            bytes: &self.payload,
            limit: h.payload_bits.min(self.payload.len() as u64 * 8),
            pos: 0,
        };
        if r.limit < expected {
            return Err(Error::Truncated(format!(
                "payload holds {} bits, configuration needs {expected}",
                r.limit
            )));
        }
        let coeff_bits = index_bits(h.coeffs);
        let steps = h.sampling_steps();
        let mut codes = Vec::with_capacity(steps.saturating_sub(1));
        for step in (2..=steps).rev() {
            let k = h.sizes.size(step);
            if k == 1 {
                codes.push(StepCode::single(1));
                continue;
            }
            let bits = index_bits(k);
            let read_index = |r: &mut BitReader| -> Result<u32> {
                let v = r.read(bits)? + 1;
                if v > k {
                    return Err(Error::CorruptPayload(format!(
                        "index {v} exceeds codebook size {k} at step {step}"
                    )));
                }
                Ok(v)
            };
            let index = read_index(&mut r)?;
            let mut refinements = Vec::with_capacity(h.depth as usize - 1);
            for _ in 1..h.depth {
                let idx = read_index(&mut r)?;
                let c = r.read(coeff_bits)? + 1;
                if c > h.coeffs {
                    return Err(Error::CorruptPayload(format!("coefficient id {c} exceeds {}", h.coeffs)));
                }
                refinements.push((idx, c));
            }
            codes.push(StepCode { index, refinements });
        }
        Ok(codes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.header.body_bytes();
        let sum = checksum(&out);
        out.extend_from_slice(&sum);
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor { bytes, pos: 0 };
        if c.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = c.u16()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let dim = c.u32()?;
        let steps = c.u32()?;
        let beta_start = c.f64()?;
        let beta_end = c.f64()?;
        let n = c.u32()? as usize;
        if n > bytes.len() / 4 {
            return Err(Error::Truncated("retained step list".into()));
        }
        let retained = (0..n).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let sizes = match c.u8()? {
            0 => KSchedule::Uniform(c.u32()?),
            1 => KSchedule::Adapted {
                k: c.u32()?,
                first: c.u32()?,
                last: c.u32()?,
            },
            2 => {
                let n = c.u32()? as usize;
                if n > bytes.len() / 4 {
                    return Err(Error::Truncated("codebook size list".into()));
                }
                KSchedule::PerStep((0..n).map(|_| c.u32()).collect::<Result<_>>()?)
            }
            t => return Err(Error::CorruptHeader(format!("unknown codebook size tag {t}"))),
        };
        let depth = c.u32()?;
        let coeffs = c.u32()?;
        let seed = c.u64()?;
        let model_id = c.u64()?;
        let payload_bits = c.u64()?;
        let body_end = c.pos;
        let stored = c.take(4)?;
        if stored != checksum(&bytes[..body_end]) {
            return Err(Error::CorruptHeader("checksum mismatch".into()));
        }
        let mut schedule = ScheduleDescriptor::linear(steps, beta_start, beta_end);
        if n > 0 {
            schedule = schedule.with_retained(retained);
        }
        let header = Header {
            dim,
            schedule,
            sizes,
            depth,
            coeffs,
            seed,
            model_id,
            payload_bits,
        };
        header.validate()?;
        let payload = &bytes[c.pos..];
        let need = payload_bits.div_ceil(8) as usize;
        if payload.len() < need {
            return Err(Error::Truncated(format!(
                "payload has {} bytes, header declares {need}",
                payload.len()
            )));
        }
        if payload.len() > need {
            return Err(Error::CorruptPayload("trailing bytes after payload".into()));
        }
        let pad = (need as u64 * 8 - payload_bits) as u32;
        if pad > 0 && payload[need - 1] & ((1u8 << pad) - 1) != 0 {
            return Err(Error::CorruptPayload("non-zero padding bits".into()));
        }
        Ok(Self {
            header,
            payload: payload.to_vec(),
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!(
                "header ends at byte {}, needed {}",
                self.bytes.len(),
                self.pos + n
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
