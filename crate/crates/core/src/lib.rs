//! Variational autoencoder for single-lead ECG cardiac cycles.
//!
//! The crate is organised bottom-up:
//!
//! * [`nn`]: a small tensor type, the layer set needed by the model
//!   (conv, dense, batch-norm, ReLU, max-pool, nearest upsample), reverse-mode
//!   backpropagation through those layers, and Adam.
//! * [`vae`]: the two-branch encoder/decoder, the VAE objective and training.
//! * [`synth`]: a Gaussian-bump ECG generator used as training corpus and
//!   ground truth.
//! * [`preprocess`]: segment cutting, R-peak detection and R-centred windowing.
//! * [`metrics`]: RBF-kernel maximum mean discrepancy.
//! * [`experiments`]: unconditional generation and latent traversal.
//! * [`persistence`]: binary dataset/checkpoint formats, CSV reports and SVG plots.

pub mod error;
pub mod experiments;
pub mod metrics;
pub mod nn;
pub mod persistence;
pub mod preprocess;
pub mod synth;
pub mod vae;

pub use error::{Error, Result};

/// Samples per cardiac cycle (0.8 s at 500 Hz).
pub const CYCLE_LEN: usize = 400;

/// Dimension of the latent feature vector.
pub const LATENT_DIM: usize = 25;

/// Sampling rate the cycle geometry assumes.
pub const DEFAULT_FS: f64 = 500.0;
