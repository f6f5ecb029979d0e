//! Self-contained f64 neural network stack: dense tensors, layers with
//! explicit forward/backward passes, the fused EMG + pose estimator, its
//! joint loss, Adam, and a deterministic training loop.
//!
//! Data layouts are channels-last ([batch][spatial...][channel]) and
//! convolution weights keep the output channel innermost, so the hot loops
//! stride contiguously. All reductions run in a fixed order; training is
//! bitwise reproducible for a given seed and thread-count independent.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod tensor;
pub mod train;

pub use loss::{joint_loss, joint_loss_grad, pressure_from_probs, LossBreakdown};
pub use model::{emg_batch, hand_batch, ModelConfig, PiMForceModel, UpsampleMode};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Param, Tensor};
pub use train::{train, train_existing, EpochStats, TrainConfig, TrainingSet};
