//! Deterministic network kernels: convolution, linear, activations, loss and
//! whole-network passes. Gradients are written by hand per layer kind.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod network;
pub mod spec;

#[cfg(test)]
pub(crate) mod testing;

pub use activation::{flatten, maxpool2x2_backward, maxpool2x2_forward, relu_backward, relu_forward};
pub use conv::{conv2d_backward, conv2d_forward};
pub use linear::{linear_backward_input, linear_backward_weight, linear_forward, linear_forward_backward};
pub use loss::softmax_cross_entropy;
pub use network::{argmax_rows, backward, forward, forward_traced, Trace};
pub use spec::{Arch, ConvSpec, LayerSpec, NetworkSpec, PrunableLayer};
