//! The toy pose network, its losses and the trainer.

mod dense;
mod loss;
mod model;
mod train;

pub use dense::{adam_step, relu, relu_backward, AdamState, Dense, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use loss::{
    chamfer_distance, chamfer_loss, residual_loss, segmentation_loss, total_loss, Chamfer, LossParts, LossWeights,
    ResidualLoss,
};
pub use model::{ForwardCache, ForwardOutput, ModelConfig, OutputGrads, ToyModel};
pub use train::{
    compute_category_stats, dataset_categories, instance_loss, predict_pose, residual_targets, train_log_csv,
    train_toy, CategoryInfo, CategoryStats, Checkpoint, EpochLog, Prediction, ReconstructionTarget, TrainConfig,
    TrainInstance, TrainOutcome, TRAIN_LOG_HEADER,
};
