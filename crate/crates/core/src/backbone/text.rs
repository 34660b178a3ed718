use super::vocab::TextPrompt;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Ctx, Embedding, FeedForward, Init, LayerNorm, MultiHeadAttention, ParamStore, PositionalEncoding};
use crate::tensor::Var;

/// Text features `t_f`, shaped `[L, d]`.
#[derive(Clone, Copy, Debug)]
pub struct TextFeatures<'t> {
    pub t_f: Var<'t>,
}

/// Stand-in for a pretrained language model: token embedding, sinusoidal
/// positions and one pre-norm self-attention + feed-forward block.
#[derive(Clone, Debug)]
pub struct TextEncoder {
    embed: Embedding,
    positions: PositionalEncoding,
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    ffn: FeedForward,
}

impl TextEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig, vocab_size: usize) -> Result<Self> {
        let m = &cfg.model;
        let d = m.d_model;
        Ok(Self {
            embed: Embedding::new(store, init, "text.embed", vocab_size, d)?,
            positions: PositionalEncoding::temporal(m.max_prompt_len, d),
            attn_norm: LayerNorm::new(store, "text.attn_norm", d)?,
            attn: MultiHeadAttention::new(store, init, "text.attn", d, m.num_heads)?,
            ffn_norm: LayerNorm::new(store, "text.ffn_norm", d)?,
            ffn: FeedForward::new(store, init, "text.ffn", d, cfg.d_ff(), m.activation)?,
        })
    }

    pub fn encode<'t>(&self, ctx: &Ctx<'t>, prompt: &TextPrompt) -> Result<TextFeatures<'t>> {
        let len = prompt.tokens.len();
        if len == 0 {
            return Err(Error::data("empty prompt"));
        }
        if len > self.positions.capacity() {
            return Err(Error::data(format!(
                "prompt has {len} tokens, more than the {} allowed",
                self.positions.capacity()
            )));
        }
        let x = self.embed.forward(ctx, &prompt.tokens)?;
        let positions: Vec<usize> = (0..len).collect();
        let x = self.positions.encode(ctx, x, &positions)?;
        let h = self.attn_norm.forward(ctx, x)?;
        let x = x.add(ctx.dropout(self.attn.forward(ctx, h, h, None)?)?)?;
        let h = self.ffn_norm.forward(ctx, x)?;
        let x = x.add(ctx.dropout(self.ffn.forward(ctx, h)?)?)?;
        Ok(TextFeatures { t_f: x })
    }
}
