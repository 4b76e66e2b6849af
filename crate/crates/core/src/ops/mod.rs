//! Differentiable layer primitives. Each forward op has a matching
//! vector-Jacobian product (`*_vjp`) used by the model's backward pass.

mod activation;
mod batchnorm;
mod conv;
pub mod gradcheck;
mod pool;

pub use activation::{relu, relu_vjp};
pub use batchnorm::{
    batchnorm2d, batchnorm2d_vjp, BatchNormCache, BatchNormGrads, BatchNormOutput, BatchNormState,
    DEFAULT_EPSILON, DEFAULT_MOMENTUM,
};
pub use conv::{
    conv2d, conv2d_vjp, conv_transpose2d, conv_transpose2d_vjp, reference, ConvGrads, ConvSpec,
};
pub use pool::{maxpool2d, maxpool2d_vjp, PoolSpec};

/// Whether batch norm uses batch statistics (and caches for backward) or
/// running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
