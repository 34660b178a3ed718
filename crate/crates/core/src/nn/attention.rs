//! Multi-head scaled dot-product attention.

use super::layers::Linear;
use super::params::{Ctx, Init, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Additive score bias for masked-out keys; finite so tensors stay finite.
const MASKED: f64 = -1e9;

/// Which keys each query row may attend to, `[Lq × Lk]` row-major.
#[derive(Clone, Debug)]
pub struct AttentionMask {
    pub rows: usize,
    pub cols: usize,
    pub allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::dim(format!("mask needs {} entries, got {}", rows * cols, allowed.len())));
        }
        if let Some(r) = (0..rows).find(|&r| !allowed[r * cols..(r + 1) * cols].iter().any(|&a| a)) {
            return Err(Error::contract(format!("attention mask row {r} admits no key")));
        }
        Ok(Self { rows, cols, allowed })
    }

    fn bias(&self) -> Tensor {
        let data = self.allowed.iter().map(|&a| if a { 0.0 } else { MASKED }).collect();
        Tensor::from_parts(vec![self.rows, self.cols], data)
    }
}

/// Projection weights of one attention block (`Wq, Wk, Wv, Wo` with biases).
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub d_model: usize,
    pub num_heads: usize,
}

impl MultiHeadAttention {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d_model: usize, num_heads: usize) -> Result<Self> {
        if num_heads == 0 || !d_model.is_multiple_of(num_heads) {
            return Err(Error::config(format!("{prefix}: {num_heads} heads do not divide d_model {d_model}")));
        }
        Ok(Self {
            q: Linear::new(store, init, &format!("{prefix}.q"), d_model, d_model)?,
            k: Linear::new(store, init, &format!("{prefix}.k"), d_model, d_model)?,
            v: Linear::new(store, init, &format!("{prefix}.v"), d_model, d_model)?,
            o: Linear::new(store, init, &format!("{prefix}.o"), d_model, d_model)?,
            d_model,
            num_heads,
        })
    }

    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        queries: Var<'t>,
        keys: Var<'t>,
        mask: Option<&AttentionMask>,
    ) -> Result<Var<'t>> {
        Ok(self.forward_with_weights(ctx, queries, keys, mask)?.0)
    }

    /// Attends `queries` over `keys` (which also supply the values).
    ///
    /// Accepts `[L, d]` or batched `[B, L, d]` inputs; the result has the
    /// rank and row count of `queries`. Also returns the attention weights,
    /// shaped `[B·heads, Lq, Lk]`.
    pub fn forward_with_weights<'t>(
        &self,
        ctx: &Ctx<'t>,
        queries: Var<'t>,
        keys: Var<'t>,
        mask: Option<&AttentionMask>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let (qs, ks) = (queries.shape(), keys.shape());
        let batched = qs.len() == 3;
        let (b, lq, lk) = match (qs.as_slice(), ks.as_slice()) {
            ([lq, dq], [lk, dk]) if *dq == self.d_model && *dk == self.d_model => (1, *lq, *lk),
            ([b, lq, dq], [bk, lk, dk]) if b == bk && *dq == self.d_model && *dk == self.d_model => (*b, *lq, *lk),
            _ => {
                return Err(Error::dim(format!(
                    "attention: queries {qs:?} / keys {ks:?} incompatible with d_model {}",
                    self.d_model
                )))
            }
        };
        if let Some(m) = mask {
            if m.rows != lq || m.cols != lk {
                return Err(Error::dim(format!("mask [{}×{}] vs scores [{lq}×{lk}]", m.rows, m.cols)));
            }
        }
        let h = self.num_heads;
        let dh = self.d_model / h;

        let split = |x: Var<'t>, len: usize| -> Result<Var<'t>> {
            if h == 1 {
                x.reshape(&[b, len, dh])
            } else {
                x.reshape(&[b, len, h, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b * h, len, dh])
            }
        };
        let q = split(self.q.forward(ctx, queries)?, lq)?;
        let k = split(self.k.forward(ctx, keys)?, lk)?;
        let v = split(self.v.forward(ctx, keys)?, lk)?;

        let mut scores = q.bmm(k, true)?.mul_scalar(1.0 / (dh as f64).sqrt());
        if let Some(m) = mask {
            scores = scores.add(ctx.constant(m.bias()))?;
        }
        let weights = scores.softmax(2)?;
        let mixed = ctx.dropout(weights)?.bmm(v, false)?;
        let merged = if h == 1 {
            mixed
        } else {
            mixed.reshape(&[b, h, lq, dh])?.permute(&[0, 2, 1, 3])?
        };
        let merged = if batched { merged.reshape(&[b, lq, self.d_model])? } else { merged.reshape(&[lq, self.d_model])? };
        Ok((self.o.forward(ctx, merged)?, weights))
    }
}
