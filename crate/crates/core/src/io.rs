//! File containers for signals and models.
//!
//! Signals: `"DDCS"`, `d: u32`, then any number of `d`-vectors of
//! little-endian `f32`. Models: `"DDCMMDL"`, `version: u16`, `kind: u8`, then
//! the kind's payload. Kind `1` is a [`GmmParams`] in its
//! [`to_bytes`](GmmParams::to_bytes) layout.

use std::io::{Read, Write};

use crate::analytic::GmmParams;
use crate::error::{Error, Result};

pub const SIGNAL_MAGIC: &[u8; 4] = b"DDCS";
pub const MODEL_MAGIC: &[u8; 7] = b"DDCMMDL";
pub const MODEL_VERSION: u16 = 1;
pub const KIND_GMM: u8 = 1;

/// Serializes vectors of a common dimension `dim`.
pub fn write_signals(mut w: impl Write, dim: usize, signals: &[Vec<f64>]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + 4 * dim * signals.len());
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for s in signals {
        if s.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: s.len(),
            });
        }
        for v in s {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&out)?;
    Ok(())
}

/// Returns `(d, vectors)`. Values are widened from `f32`.
pub fn read_signals(mut r: impl Read) -> Result<(usize, Vec<Vec<f64>>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 8 {
        return Err(if bytes.len() >= 4 && &bytes[..4] != SIGNAL_MAGIC {
            Error::BadMagic
        } else {
            Error::Truncated("signal header".into())
        });
    }
    if &bytes[..4] != SIGNAL_MAGIC {
        return Err(Error::BadMagic);
    }
    let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if dim == 0 {
        return Err(Error::CorruptHeader("signal dimension is zero".into()));
    }
    let body = &bytes[8..];
    if body.len() % (4 * dim) != 0 {
        return Err(Error::Truncated("partial signal vector".into()));
    }
    let signals = body
        .chunks_exact(4 * dim)
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        })
        .collect();
    Ok((dim, signals))
}

pub fn write_model(mut w: impl Write, params: &GmmParams) -> Result<()> {
    let mut out = MODEL_MAGIC.to_vec();
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.push(KIND_GMM);
    out.extend_from_slice(&params.to_bytes());
    w.write_all(&out)?;
    Ok(())
}

pub fn read_model(mut r: impl Read) -> Result<GmmParams> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..7] != MODEL_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 10 {
        return Err(Error::Truncated("model header".into()));
    }
    let version = u16::from_le_bytes([bytes[7], bytes[8]]);
    if version != MODEL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    match bytes[9] {
        KIND_GMM => GmmParams::from_bytes(&bytes[10..]),
        other => Err(Error::Model(format!("unknown model kind {other}"))),
    }
}
