//! Unrolled variational network for dynamic multi-coil reconstruction.
//!
//! The network runs K gradient-like steps. Each layer applies a learned
//! data-consistency term (k-space residual passed through a learnable
//! activation) and a learned regularization term (four 3D filter banks with
//! per-filter activations), both scaled by modulation weights that depend on
//! the mean sampling rate, and accumulates them with a learned momentum.
//! Everything is differentiable; training lives in [`crate::training`].

pub mod activation;
pub mod conv;
pub mod infer;
pub mod model;

pub use activation::ActKind;
pub use infer::{infer, layer_step, VnInput};
pub use model::{init_weights, LayerWeights, NetworkParams, VnWeights};
