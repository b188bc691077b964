//! Self-adversarial negative sampling, the margin loss, optimizers and the
//! training loop.

mod loss;
mod optim;
mod sampler;
mod trainer;

pub use loss::{log_sigmoid, loss, loss_gradient, self_adversarial_weights};
pub use optim::{Adam, Optimizer, OptimizerKind, Sgd};
pub use sampler::{sample_negatives, CorruptionSide, NegativeBatch};
pub use trainer::{
    normalize_entities, train, train_step, LogRow, TrainConfig, TrainLog, TrainOutcome, TrainState,
};
