//! AdamW optimization with cosine warmup, training windows and checkpointing.

mod data;
mod optim;
mod train;

pub use data::{held_out_count, split_held_out, summarize, TrainingSet, Window};
pub use optim::{lr_at, AdamW, TrainConfig};
pub use train::{
    batch_loss, read_loss_csv, step_rng, train, LossRecord, TrainOptions, TrainOutput, FINAL_CHECKPOINT, LOSS_CSV,
};
