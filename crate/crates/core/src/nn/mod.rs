//! Minimal tensor and reverse-mode differentiation engine.
//!
//! Activations flow batch-first: `[batch, features]` for dense layers and
//! `[batch, channels, length]` for the 1-D convolutional layers. Each layer
//! caches what its backward pass needs during [`Layer::forward`]; calling
//! [`Layer::backward`] then walks the cached graph in reverse, accumulating
//! parameter gradients into each parameter tensor's `grad` buffer and
//! returning the gradient with respect to the layer input.
//!
//! Gradients accumulate: running backward twice without
//! [`Sequential::zero_grad`] (or [`Tensor::zero_grad`]) sums both passes.
//! The training loop zeroes gradients before every step.

mod adam;
pub mod gradcheck;
mod layers;
pub mod ops;
mod scalar;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use layers::{
    concat_features, split_features, BatchNorm1d, Conv1d, Dense, Init, Layer, LayerSpec, MaxPool1d,
    Mode, Relu, Sequential, UpsampleNearest1d,
};
pub use scalar::Scalar;
pub use tensor::Tensor;
