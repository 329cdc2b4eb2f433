//! Deterministic dense-tensor primitives.

mod conv;
mod init;
mod ops;
mod tensor;

pub use conv::{conv2d, conv_out_len, depthwise_conv2d, ConvWeights, DepthwiseWeights};
pub use init::{gen_weights, Seed, SplitMix64};
pub use ops::{leaky, matmul, matmul_tn, softmax_cols, softmax_rows};
pub use tensor::{Tensor4, TokenMatrix};
