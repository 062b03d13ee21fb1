//! Negative sampling, loss, optimizer and the training loop.

mod config;
mod loss;
mod optim;
mod sampler;
mod trainer;

pub use config::TrainConfig;
pub use loss::{ce_loss, ce_loss_with_grad};
pub use optim::AdamW;
pub use sampler::{sample_negatives, PopularitySampler};
pub use trainer::{train, train_with, EpochRecord, StopReason, TrainInstance, TrainOutcome, Trainer};
