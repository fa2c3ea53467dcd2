//! Small convolutional networks: model, losses, optimizers and training.

pub mod checkpoint;
pub mod loss;
pub mod model;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, TrainState};
pub use loss::{loss_mse, loss_softmax_ce};
pub use model::{model_init, Downsampling, FirstLayerSpec, BlockSpec, Model, ModelSpec, Task};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{evaluate, train, EpochRecord, TrainConfig, TrainHistory};
