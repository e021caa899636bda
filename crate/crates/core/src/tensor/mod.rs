//! Dense `f64` tensors, forward kernels, a recording tape for reverse-mode
//! gradients, and the multiply counter used for FLOP accounting.

pub mod flops;
pub mod gradcheck;
pub mod kernels;
mod tape;
mod value;

pub use flops::FlopCounter;
pub use gradcheck::{finite_diff_oracle, max_relative_error, normwise_relative_error, relative_error};
pub use kernels::{depthwise_conv3d, gelu, layer_norm, matmul, softmax_lastdim};
pub use tape::{Gradients, Tape, Var};
pub use value::{strides, Tensor};
