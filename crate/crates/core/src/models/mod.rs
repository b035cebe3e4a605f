//! Fully connected forecaster with hand-written backpropagation, ADAM and an
//! early-stopping training loop.

pub mod adam;
pub mod mlp;
pub mod train;

pub use adam::{adam_step, AdamState};
pub use mlp::{mlp_backward, mlp_backward_into, mlp_forward, MlpCache, MlpGrads, MlpParams, DEFAULT_HIDDEN};
pub use train::{dataset_loss, predict, train, EpochRecord, TrainConfig, TrainOutcome, TrainTrace};
