//! Layer primitives with explicit forward and backward passes.

mod activation;
mod batchnorm;
mod conv;
mod loss;
mod pool;

pub use activation::{relu, relu_backward};
pub use batchnorm::{BatchNorm, BnGrads, Mode, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_backward_opt, conv2d_forward, same_padding, ConvGrads, ConvParams};
pub use loss::{sigmoid, sigmoid_bce_loss};
pub use pool::{global_average_pool, global_average_pool_backward};
