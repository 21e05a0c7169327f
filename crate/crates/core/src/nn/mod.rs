//! Small differentiable-model kit: Mish FCNN and Gaussian-RBF KAN layers,
//! manual reverse mode, Adam, plateau schedule, early stopping and checkpoints.

pub mod checkpoint;
pub mod loss;
pub mod mish;
pub mod network;
pub mod optim;
pub mod train;

pub use checkpoint::{sha256_hex, Checkpoint, CheckpointHeader};
pub use loss::Loss;
pub use mish::{mish, mish_grad, mish_with_grad};
pub use network::{forward, init_params, NetSpec, Network, Tape};
pub use optim::{AdamState, EarlyStopping, PlateauScheduler};
pub use train::{mean_loss, split_indices, train_from, train_supervised, Dataset, EpochRecord, Standardizer, TrainConfig, TrainOutcome};
