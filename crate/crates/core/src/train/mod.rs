//! Loss, optimizer, synthetic data and the training loop.

mod data;
mod loss;
mod optim;
mod trainer;

pub use data::{class_color, make_imbalanced_dataset, make_toy_dataset, Sample};
pub use loss::weighted_cross_entropy;
pub use optim::{OptState, RmsProp};
pub use trainer::{
    evaluate, loss_weights, predict_dataset, score_predictions, train_loop, EpochLog, TrainConfig,
    TrainOutcome,
};
