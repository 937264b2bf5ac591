//! Differentiable numeric kernels.
//!
//! Every kernel is a plain function over slices and [`Tensor`](crate::Tensor)s:
//! a forward pass returning whatever the backward pass needs, and a backward
//! pass that accumulates parameter gradients into caller-owned buffers.

pub mod act;
pub mod attention;
pub mod conv;
pub mod linear;
pub mod norm;
pub mod pool;
pub mod resample;

pub use act::{gelu, relu, sigmoid, softmax_rows};
pub use attention::{multi_head_attention, AttentionWeights};
pub use conv::{conv2d, conv2d_backward, ConvGeometry};
pub use norm::{batch_norm, layer_norm, BatchNormStats, BN_EPS, BN_MOMENTUM, LN_EPS};
pub use pool::max_pool2d;
pub use resample::{bilinear2x, concat_channels, upsample2x};

/// Whether batch normalization uses batch statistics or running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
