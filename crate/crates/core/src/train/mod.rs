//! Pre-training: schedules, AdamW, the per-batch objective and the epoch loop.

mod config;
mod gradcheck;
mod optim;
mod run;
mod schedule;
mod step;

pub use config::TrainConfig;
pub use gradcheck::{check_total_loss, GradCheckConfig};
pub use optim::{clip_global_norm, global_norm, AdamW};
pub use run::{run_pretrain, split_indices, EpochSummary, StepRecord, TrainLog, Trainer};
pub use schedule::{lr_at, momentum_at, weight_decay_at};
pub use step::{
    batch_objective, evaluate_batch, momentum_target, prepare, BatchGradients, BatchResult,
    Prepared,
};
