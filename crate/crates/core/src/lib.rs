//! Times2D: forecasting by folding a series along its dominant periods into
//! 2D grids and adding a derivative-heatmap view of the same window.
// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fsdh;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pdb;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use model::{ModelConfig, Precision, Times2D};
pub use tensor::{Tape, Tensor, Var};
pub use train::{LossKind, TrainConfig};
