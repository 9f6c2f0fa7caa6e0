//! Primitive kernels. Every forward has a hand-written adjoint next to it.

pub mod channels;
pub mod conv;
pub mod elementwise;
pub(crate) mod gemm;
pub mod norm;
pub mod pool;
pub mod temporal;

pub use channels::{concat_channels, split_channels};
pub use conv::{conv3d, conv3d_oracle, ConvGeometry, ConvKernel};
pub use elementwise::{add, hadamard, relu, scale, sigmoid, softmax, Broadcast};
pub use norm::{channel_stats, normalize};
pub use pool::{channel_pool, global_pool, spatial_pool};
pub use temporal::temporal_diff;
