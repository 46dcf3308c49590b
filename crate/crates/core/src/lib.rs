//! Dual-resolution residual segmentation of skin lesions.
//!
//! The crate is generic over the floating-point type (`f32` or `f64`); the aliases
//! below fix the common choices.

pub mod autograd;
pub mod distance;
pub mod error;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod network;
pub mod pipeline;
pub mod scalar;
pub mod synthdata;
pub mod tensor;

pub use error::{Error, Result};
pub use mask::BinaryMap;
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = tensor::Tensor<f32>;
pub type Tensor64 = tensor::Tensor<f64>;
pub type Params32 = network::ModelParams<f32>;
pub type Params64 = network::ModelParams<f64>;
