//! A small dense-tensor engine: kernels with hand-written backward passes,
//! transformer layers, loss, optimizer, gradient checking, tokenizer and the
//! checkpoint format.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod tensor;
pub mod tokenizer;

pub use gradcheck::{grad_check, Differentiable, GradCheckReport};
pub use layers::{AttentionMask, Block, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use loss::{cross_entropy, CrossEntropy};
pub use optim::{Adam, AdamConfig};
pub use tensor::{Parameter, Tensor};
pub use tokenizer::{TokenId, Tokenizer};
