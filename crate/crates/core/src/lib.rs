//! Multi-prize lottery ticket (MPT) training for binary-weight networks.
//!
//! Scores select a supermask over frozen random weights; surviving weights are
//! binarized to `scale · sign(W)`. On top of that this crate provides
//! power-propagation score reparameterization, threshold-based mask
//! selection, mask-frozen weight fine-tuning, and post-hoc zero-kernel
//! analysis with a kernel-skipping inference path.

pub mod analyze;
pub mod bench;
pub mod data;
pub mod error;
pub mod nn;
pub mod rng;
pub mod sparse;
pub mod supermask;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
