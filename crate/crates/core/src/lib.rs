//! A small CPU neural-network engine built around a bypass-linked
//! encoder-decoder segmentation network, with cost analysis, segmentation
//! metrics, a toy training harness and binary file formats.

pub mod analyze;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{IntTensor, Real, Tensor};
