//! Residual-moment loss library: coordinate-weighted residual losses for
//! segmentation, a small reverse-mode autodiff stack with a two-level
//! encoder-decoder network, synthetic datasets with positional structure,
//! and region/boundary evaluation metrics.

pub mod autodiff;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod grid;
pub mod loss;
pub mod metrics;
pub mod moments;
pub mod nn;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::{Mask, Tensor};
