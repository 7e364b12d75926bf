//! Set-attention building blocks: positional embeddings, self/cross
//! attention, and interleaved spatio-temporal attention over latent
//! sequences.

pub mod blocks;
pub mod layers;
pub mod latent;

pub use blocks::{
    code_major_order, cond_attention_flops, flops_count, frame_major_order, AttentionBlock, AttentionMode, IstaBlock,
    StageMacs,
};
pub use latent::{LatentSequence, LatentSet};
pub use layers::{fourier_features, FeedForward, LayerNorm, Linear, PosEmb, FOURIER_DIM};
