//! Step-unrolled denoising objective and the training loop.

mod corruption;
mod loss;
mod optim;
mod trainer;

pub use corruption::{corrupt, corrupt_with_thresholds, Corruption};
pub use loss::{cross_entropy, replay_unrolled_loss, sample_rows, unrolled_loss, UnrolledLoss};
pub use optim::{AdamSettings, AdamW};
pub use trainer::{batch_indices, csv_header, train, StepRecord, TrainConfig, Trainer};
