//! A small convolutional regression network with hand-written backward
//! passes.
//!
//! Every layer is a pair of free functions in [`layers`] (forward, backward)
//! so they can be gradient-checked in isolation. [`Network`] composes them
//! into conv blocks (3x3 conv, batch norm, ReLU, optional 2x2 max pool)
//! followed by fully connected layers. Numerics are generic over [`Scalar`]:
//! training runs in `f32`, gradient checks in `f64`.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
mod network;
mod tensor;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOptions, GradCheckReport};
pub use network::{
    ConvBlockSpec, ConvParams, DenseParams, ForwardCache, Mode, NetConfig, NetGrads, NetParams, Network, OUTPUT_DIM,
};
pub use tensor::Tensor4;

/// Floating point type the engine runs on.
pub trait Scalar: Float + NumAssign + Sum + Default + Debug + Send + Sync + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}
