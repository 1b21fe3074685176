//! Dense matrices, hand-derived layer gradients and the optimizer.

mod adamw;
pub mod gradcheck;
pub mod layers;
mod matrix;
mod rng;
mod scalar;

pub use adamw::AdamW;
pub use layers::{
    dropout, layer_norm, layer_norm_backward, softmax_rows, DropoutMask, FeedForward, LayerNorm,
    Linear, MultiHeadAttention, Param,
};
pub use matrix::{gemm, Matrix};
pub use rng::RngState;
pub use scalar::Scalar;
