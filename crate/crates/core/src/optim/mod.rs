//! Training loss, the adaptive step rule and the staged training schedule.

mod adam;
mod loss;
mod train;

pub use adam::{adaptive_step, Adam, AdamConfig, LearningRates, Moments};
pub use loss::{loss, loss_weighted, LossWeights};
pub use train::{train_stage, KeyframeViews, LogRow, TrainConfig, TrainReport};
