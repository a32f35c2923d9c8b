//! Dense tensors, the ε-prediction network with exact gradients, Adam, and
//! finite-difference verification.

mod adam;
pub mod checkpoint;
mod denoiser;
mod gradcheck;
pub mod ops;
mod params;
mod tensor;

pub use adam::{adam_step, AdamHyper, OptimizerState};
pub use denoiser::{sinusoidal_embedding, Arch, DenoiserModel, ForwardCache, Init};
pub use gradcheck::{gradient_check, mse_loss, GradCheckConfig, GradCheckReport, RELATIVE_FLOOR};
pub use ops::{conv2d, Activation};
pub use params::{ParamStore, ParamTensor};
pub use tensor::Tensor4;
