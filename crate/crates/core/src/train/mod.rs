//! Optimization: class-weighted BCE, Adam with decoupled weight decay, the
//! step learning-rate schedule, the epoch loop and checkpoint encoding.

mod checkpoint;
mod loss;
mod optim;
mod trainer;

pub use checkpoint::Checkpoint;
pub use loss::{class_weights, weighted_bce, ClassWeights};
pub use optim::{step_lr, Adam, AdamConfig};
pub use trainer::{
    evaluate_tensors, preprocess_eval, stack_batch, train, EpochRecord, Evaluation, SelectMetric, Snapshot, TrainConfig, TrainOutcome,
    Trainer,
};
