//! The guide under `book/` compiled into doc-tests: every fenced Rust block
//! in the chapters runs under `cargo test --doc`, which keeps the book and
//! the crate from drifting apart.

#[doc = include_str!("../../../book/src/introduction.md")]
pub struct Introduction;

#[doc = include_str!("../../../book/src/tensors-and-gradients.md")]
pub struct TensorsAndGradients;

#[doc = include_str!("../../../book/src/separable-convolutions.md")]
pub struct SeparableConvolutions;

#[doc = include_str!("../../../book/src/network.md")]
pub struct Network;

#[doc = include_str!("../../../book/src/likelihood-maps.md")]
pub struct LikelihoodMaps;

#[doc = include_str!("../../../book/src/training.md")]
pub struct Training;

#[doc = include_str!("../../../book/src/evaluation.md")]
pub struct Evaluation;

#[doc = include_str!("../../../book/src/synthetic-data.md")]
pub struct SyntheticData;

#[doc = include_str!("../../../book/src/cli.md")]
pub struct CliReference;
