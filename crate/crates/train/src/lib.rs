//! Losses, augmentation and the training loop.

pub mod augment;
pub mod losses;
pub mod source;
pub mod trainer;

pub use augment::{random_perspective, random_perspective_augment, Perspective};
pub use losses::{batch_loss, consistent_loss, dual_loss, total_loss, BatchLoss, LossWeights};
pub use source::{PairSource, Subset, TrainSample};
pub use trainer::{epoch_order, evaluate_loss, predict_log2, train, HistoryRow, TrainConfig, Trainer};
