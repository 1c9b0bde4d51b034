//! Dense networks: data ingestion, training and evaluation.

pub mod dataset;
pub mod io;
pub mod matrix;
pub mod network;
pub mod train;

pub use dataset::{load_mnist_dir, load_mnist_idx, Dataset};
pub use io::{load_network, save_network};
pub use matrix::Matrix;
pub use network::{argmax, backward, forward, init_network, Activation, GradientSet, Layer, Network};
pub use train::{evaluate, predict, sgd_train, TrainConfig, TrainOutcome};
