//! Multimodal traffic-flow forecasting: per-modality convolution → GRU →
//! attention branches fused by a dense head, trained with hand-written
//! backward passes.

pub mod baselines;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Rng, Tensor};
