//! Core library: dense tensors with reverse-mode autodiff, the
//! central-difference convolution/pooling family, rank-pooled dynamic images,
//! depth-supervision losses, reference depth networks, a differentiable
//! architecture search engine with domain-aware and meta-learning schemes,
//! presentation-attack metrics, and a synthetic multi-domain task generator.

pub mod cdn;
pub mod checkpoint;
pub mod cdops;
pub mod dynimg;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod metrics;
pub mod nas;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod schemes;
pub mod spaces;
pub mod supervision;
pub mod synthetic;
pub mod tape;
pub mod tensor;

pub use error::{Error, Result};
pub use tape::{Param, Tape, Var};
pub use tensor::{Scalar, Tensor};
