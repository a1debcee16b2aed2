//! Next-token training with manual backpropagation and AdamW.

mod adamw;
mod config;
mod corpus;
mod grad;
mod run;
mod schedule;

pub use adamw::{adamw_step, AdamHyper, AdamState};
pub use config::{TrainConfig, TRAIN_PRESET_NAMES};
pub use corpus::{batch_hash, BatchSampler, Corpus};
pub use grad::{batch_loss, loss_and_grads};
pub use run::{eval_loss, train, LogRow, StepHook, TrainLog};
pub use schedule::lr_at;
