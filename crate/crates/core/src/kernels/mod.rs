//! Forward and backward tensor kernels.
//!
//! Everything here is a pure function of its inputs. Forward kernels that do
//! multiply-accumulate work report it to [`crate::mac`]; backward kernels
//! never do.

pub mod conv;
pub mod pointwise;
pub mod shape;

pub use conv::{
    conv1d, conv2d, transposed_conv1d, transposed_conv2d, Conv1dSpec,
};
pub use pointwise::{bmm, gelu, glu, layer_norm, layer_norm_span, prelu, sigmoid, softmax};
pub use shape::{channel_shuffle, channel_unshuffle, concat, permute, slice, unfold1d};
