//! AED-EEND speaker diarization at desk scale.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`numerics`] — dense tensors with reverse-mode gradients and a
//!   deterministic symmetric eigensolver
//! - [`features`] — WAV input, log-mel filterbanks, frame splicing
//! - [`simulate`] — synthetic labeled multi-speaker mixtures in feature space
//! - [`model`] — embedding encoder, attractor decoder, posteriors, loss
//! - [`train`] — teacher-forcing training loop with checkpointing
//! - [`decode`] — iterative enrollment decoding (GT/Init/Rand/SC strategies)
//! - [`score`] — DER with collar, per-speech-type FA/MISS, RTTM I/O
//! - [`container`] — the on-disk array container used for shards, features
//!   and checkpoints

pub mod container;
pub mod decode;
pub mod error;
pub mod features;
pub mod model;
pub mod numerics;
pub mod score;
pub mod simulate;
pub mod train;

pub use error::{Error, Result};

/// Build-wide float precision. All tensor values, features and metrics use
/// this type; gradient-check tolerances assume the default `f64`.
#[cfg(not(feature = "single-precision"))]
pub type Real = f64;
#[cfg(feature = "single-precision")]
pub type Real = f32;
