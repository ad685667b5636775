use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("step {step} outside the schedule range 1..={steps}")]
    StepOutOfRange { step: usize, steps: usize },

    #[error("codebook entry {index} out of bounds for timestep {timestep} (size {size})")]
    EntryOutOfBounds {
        timestep: usize,
        index: usize,
        size: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("refined noise has zero empirical standard deviation")]
    DegenerateNoise,

    #[error("degenerate likelihood: {0}")]
    DegenerateLikelihood(String),

    #[error("score model failure: {0}")]
    Model(String),

    #[error("model id mismatch: stream expects {expected:016x}, model provides {found:016x}")]
    ModelMismatch { expected: u64, found: u64 },

    #[error("bad magic bytes")]
    BadMagic,

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),

    #[error("truncated stream: {0}")]
    Truncated(String),

    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    #[error("corrupt payload: {0}")]
    CorruptPayload(String),

    #[error("remote denoiser timed out")]
    Timeout,

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("remote error: {0}")]
    Remote(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}

pub(crate) fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}
