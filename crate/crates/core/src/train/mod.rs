//! Optimizers, the training stages and checkpoints.

pub mod checkpoint;
pub mod optim;
mod stages;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use optim::{optimizer_step, Hyper, OptimState, OptimizerKind, StepStats};
pub use stages::{
    batch_indices, batch_loss, caption_example, epoch_order, listing_example, lm_pretrain, log_to_csv, qa_example,
    stage1_pretrain, stage2_finetune, train_examples, trainable_names, Example, LogRow, Stage, TrainOptions,
    LOG_HEADER,
};
