//! Reusable neural building blocks on top of the tape.

mod attention;
mod layers;
mod params;
mod posenc;

pub use attention::{AttentionMask, MultiHeadAttention};
pub use layers::{conv1d, Activation, Conv1d, Embedding, FeedForward, LayerNorm, Linear};
pub use params::{Bound, Ctx, GradMap, Init, Param, ParamStore};
pub use posenc::{sinusoid_table, sinusoid_table_2d, PeKind, PositionalEncoding};
