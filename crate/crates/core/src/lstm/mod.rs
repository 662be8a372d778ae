//! Single-layer LSTM next-token model with hand-written backpropagation,
//! Adam training, closed-loop rollout and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod matrix;
pub mod model;
pub mod params;
pub mod rollout;
pub mod train;

pub use checkpoint::{fingerprint, Checkpoint};
pub use model::{argmax, backward, forward_prefix, forward_step, next_token_accuracy, sequence_loss, softmax, LstmState};
pub use params::{EmbeddingDims, LstmParams, ModelShape};
pub use rollout::{rollout, RolloutOutcome, RolloutPolicy, RolloutResult, StopCondition};
pub use train::{mean_loss, train, EpochStats, TrainConfig, TrainOutcome};
