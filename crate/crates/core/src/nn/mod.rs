//! Minimal feedforward engine with analytic gradients: masked affine layers,
//! leaky ReLU, Adam, and an early-stopping mini-batch training loop.

mod adam;
mod layer;
mod mlp;
mod train;

pub use adam::{adam_step, AdamState};
pub use layer::{leaky_relu, leaky_relu_backward, AffineCache, AffineGrads, AffineLayer};
pub use mlp::{Mlp, MlpCache, LEAKY_SLOPE};
pub use train::{gradient_check, train, EpochRecord, LossModel, TrainConfig, TrainHistory};
