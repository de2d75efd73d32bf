//! Reverse-mode differentiation engine with the layer set needed by the
//! multi-view embedding networks: same-padded 5×5 convolution and its
//! transpose, 2×2 max pooling and replication un-pooling, ReLU, affine
//! layers, softmax cross-entropy, L2 reconstruction loss, and Adam.
//!
//! The engine is generic over [`Scalar`]: `f32` for training and `f64` for
//! finite-difference gradient checks.

mod adam;
mod error;
pub mod gradcheck;
mod kernels;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{NnError, Result};
pub use params::{ParamSet, CHECKPOINT_VERSION};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
