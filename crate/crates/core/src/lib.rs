//! Numeric core for hybrid CNN-Transformer binary lesion classifiers.
//!
//! Everything here is `no_std` (with `alloc`): dense tensors with a
//! reverse-mode tape, the layer zoo (convolutional backbone, Transformer
//! encoder, spline-edge Kolmogorov-Arnold layer), the two classifier
//! topologies, the image transforms and augmentation pipeline, the training
//! loop and the evaluation metrics. File and process IO live in the `derm`
//! companion crate.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autograd;
pub mod data;
mod error;
pub mod gradcheck;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Scalar, Tensor};
