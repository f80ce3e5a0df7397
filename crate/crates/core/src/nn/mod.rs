//! Minimal differentiable layer stack: exactly the layer kinds the speech
//! VAE needs, with hand-written reverse-mode gradients.

pub mod adam;
pub mod batchnorm;
pub mod conv;
pub mod gradcheck;
mod layer;
mod linear;
mod param;
mod scalar;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use batchnorm::BatchNorm;
pub use conv::{ConvGeom, Conv2d, ConvTranspose2d};
pub use layer::{Cache, Layer, LayerKind, LayerSpec, Mode, Parameterized, Sequential};
pub use linear::Linear;
pub use param::Param;
pub use scalar::Scalar;
pub use tensor::Tensor;
