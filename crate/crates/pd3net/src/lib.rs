//! People detection in depth images with a separable-convolution network.
//!
//! The crate provides the full pipeline: a dense `f64` tensor core with
//! reverse-mode differentiation, the convolutional layer set and residual
//! blocks of the two-stage detection network, Gaussian likelihood-map label
//! encoding and decoding, a two-phase training loop, the precision/recall
//! evaluation protocol with threshold sweeps, an analytic + measured cost
//! model for factorized convolutions, and a procedural depth-scene generator
//! for producing training data.
//!
//! See the `book/` directory for a guided tour; every code snippet in it runs
//! as a doc-test of this crate.

#[cfg(doctest)]
mod book;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod cost;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod layers;
pub mod loss;
pub mod model;
pub mod optim;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::{Fill, Shape, Tensor};
