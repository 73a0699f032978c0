//! Face anti-spoofing with a small fully convolutional network trained in
//! two stages: whole-face supervision, then fine-tuning on spoof regions
//! mined from the network's own score maps.

pub mod data;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod heatmap;
pub mod layers;
pub mod model;
pub mod optim;
pub mod region;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{FcnConfig, FcnModel, ScoreMap};
pub use tensor::{Real, Shape, Tensor};
