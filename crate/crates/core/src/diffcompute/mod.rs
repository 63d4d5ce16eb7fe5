//! Dense tensors, a fixed menu of differentiable layers, Adam and Polyak
//! averaging, and the binary checkpoint container.
//!
//! Networks are [`Sequential`] stacks whose parameters live in a
//! [`ParameterSet`]. [`Sequential::forward`] returns a [`Tape`];
//! [`Sequential::backward`] consumes it and *accumulates* into the
//! parameter gradients, so callers zero gradients explicitly. That lets
//! several losses route gradients into one shared parameter set.

pub mod checkpoint;
pub mod gradcheck;
mod kernels;
mod layers;
mod params;
mod scalar;
mod tensor;

pub use layers::{conv_output_size, deconv_output_size, LayerSpec, Sequential, Tape};
pub use params::{
    adam_step, adam_step_with, soft_update, AdamConfig, MomentBank, Moments, ParamEntry, ParameterSet,
};
pub use scalar::Scalar;
pub use tensor::Tensor;
