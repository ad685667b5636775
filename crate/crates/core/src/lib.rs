//! Denoising diffusion codebook models.
//!
//! A reverse diffusion process whose per-step noise is drawn from fixed,
//! seed-derived Gaussian codebooks. Random picks give generation; picks
//! aimed at a target give a compression codec whose bit-stream is the list of
//! chosen indices; picks driven by likelihood gradients, restorers or
//! classifiers give compressed posterior sampling, restoration, guidance and
//! editing.
//!
//! ```
//! use ddcm::analytic::{GmmModel, GmmParams};
//! use ddcm::codec::{compress, decompress, CodecConfig};
//!
//! let model = GmmModel::new(GmmParams::standard_normal(4)).unwrap();
//! let packed = compress(&[0.5, -0.5, 1.0, 0.0], &CodecConfig::uniform(20, 16, 1), &model).unwrap();
//! assert_eq!(decompress(&packed.stream, &model).unwrap(), packed.reconstruction);
//! ```
//!
//! Modules:
//!
//! * [`schedule`], [`model`]: the VP schedule, the score-model trait and the
//!   single reverse step;
//! * [`codebook`]: keyed codebook generation;
//! * [`selection`], [`sampler`]: index-selection rules and the loop that
//!   applies them;
//! * [`codec`]: matching pursuit, rate accounting and the bit-stream;
//! * [`analytic`]: Gaussian-mixture models, observations and closed-form
//!   oracles;
//! * [`remote`]: the external denoiser protocol;
//! * [`io`], [`harness`]: file containers, metrics and experiment sweeps.

pub mod analytic;
pub mod codebook;
pub mod codec;
pub mod error;
pub mod harness;
pub mod io;
pub mod linear;
pub mod model;
pub mod remote;
pub mod sampler;
pub mod schedule;
pub mod selection;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/codebooks.md")]
    mod codebooks {}
    #[doc = include_str!("../../../book/src/sampling.md")]
    mod sampling {}
    #[doc = include_str!("../../../book/src/compression.md")]
    mod compression {}
    #[doc = include_str!("../../../book/src/conditional.md")]
    mod conditional {}
    #[doc = include_str!("../../../book/src/remote.md")]
    mod remote {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
