//! Toy language model, exact gradients and layer-wise normalization.

pub mod checkpoint;
pub mod data;
pub mod layout;
pub mod model;
pub mod train;

pub use data::{read_dataset, validate_dataset, write_dataset, ToySample};
pub use layout::{layerwise_normalize, FlatGradient, LayerEntry, LayerMap, NormalizeReport};
pub use model::{ModelShape, ToyLm};
pub use train::{mean_loss, train_toy, TrainConfig, TrainReport};
