//! Gradients, optimizers, synthetic data and the training loops.

mod backprop;
mod data;
mod gradients;
mod optim;
mod train;

pub use data::{gen_toy_dataset, load_image_grid_csv, toy_prototypes, Batch, ToyDatasetSpec};
pub use gradients::{
    param_gradients, segment_gradients, segment_loss, GradientOutput, LossSpec, SegmentData,
};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use train::{
    evaluate, finetune_block, finetune_full, train_model, BlockFinetuneOptions,
    BlockFinetuneOutcome, EpochLog, Evaluation, TrainLog, TrainOptions,
};
