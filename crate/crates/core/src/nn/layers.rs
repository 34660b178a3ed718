use serde::{Deserialize, Serialize};

use super::params::{Ctx, Init, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Affine map `x·W + b` over the last axis.
#[derive(Clone, Debug)]
pub struct Linear {
    w: String,
    b: String,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let (w, b) = (format!("{prefix}.w"), format!("{prefix}.b"));
        store.insert(&w, init.xavier(d_in, d_out))?;
        store.insert(&b, Tensor::zeros(&[d_out]))?;
        Ok(Self { w, b, d_in, d_out })
    }

    /// Same as [`Linear::new`] but with all-zero weights.
    pub fn zeroed(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let (w, b) = (format!("{prefix}.w"), format!("{prefix}.b"));
        store.insert(&w, Tensor::zeros(&[d_in, d_out]))?;
        store.insert(&b, Tensor::zeros(&[d_out]))?;
        Ok(Self { w, b, d_in, d_out })
    }

    pub fn weight_name(&self) -> &str {
        &self.w
    }

    pub fn bias_name(&self) -> &str {
        &self.b
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let width = *x.shape().last().unwrap();
        if width != self.d_in {
            return Err(Error::dim(format!("{}: input width {width}, expected {}", self.w, self.d_in)));
        }
        x.matmul(ctx.param(&self.w)?)?.add(ctx.param(&self.b)?)
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, prefix: &str, d: usize) -> Result<Self> {
        let (gamma, beta) = (format!("{prefix}.gamma"), format!("{prefix}.beta"));
        store.insert(&gamma, Tensor::ones(&[d]))?;
        store.insert(&beta, Tensor::zeros(&[d]))?;
        Ok(Self { gamma, beta })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(ctx.param(&self.gamma)?, ctx.param(&self.beta)?)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    #[default]
    Gelu,
}

/// Position-wise two-layer perceptron `W2·act(W1·x + b1) + b2`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        d: usize,
        d_ff: usize,
        activation: Activation,
    ) -> Result<Self> {
        if d_ff < d {
            return Err(Error::config(format!("{prefix}: d_ff {d_ff} smaller than d {d}")));
        }
        Ok(Self {
            up: Linear::new(store, init, &format!("{prefix}.up"), d, d_ff)?,
            down: Linear::new(store, init, &format!("{prefix}.down"), d_ff, d)?,
            activation,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.up.forward(ctx, x)?;
        let h = match self.activation {
            Activation::Relu => h.relu(),
            Activation::Gelu => h.gelu(),
        };
        let h = ctx.dropout(h)?;
        self.down.forward(ctx, h)
    }
}

/// Same-padded 1-D cross-correlation along the rows of `x`.
///
/// `x` is `[L, d_in]`, `kernel` is `[k, d_in, d_out]` with odd `k`, `bias` is `[d_out]`.
/// Row `i` of the output is `bias + Σ_j x[i + j − k/2] · kernel[j]`, with rows
/// outside `[0, L)` read as zeros.
pub fn conv1d<'t>(x: Var<'t>, kernel: Var<'t>, bias: Option<Var<'t>>) -> Result<Var<'t>> {
    let (xs, ks) = (x.shape(), kernel.shape());
    if ks.len() != 3 || xs.len() != 2 || ks[1] != xs[1] {
        return Err(Error::dim(format!("conv1d: input {xs:?} incompatible with kernel {ks:?}")));
    }
    let (k, d_in, d_out) = (ks[0], ks[1], ks[2]);
    if k % 2 == 0 {
        return Err(Error::config(format!("conv1d kernel size must be odd, got {k}")));
    }
    let len = xs[0];
    let half = k / 2;
    let tape = x.tape();
    let cols = if k == 1 {
        x
    } else {
        let pad = tape.constant(Tensor::zeros(&[half, d_in]));
        let padded = tape.concat(&[pad, x, pad], 0)?;
        let windows = (0..k).map(|j| padded.narrow(0, j, len)).collect::<Result<Vec<_>>>()?;
        tape.concat(&windows, 1)?
    };
    let out = cols.matmul(kernel.reshape(&[k * d_in, d_out])?)?;
    match bias {
        Some(b) => out.add(b),
        None => Ok(out),
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    kernel: String,
    bias: String,
    pub kernel_size: usize,
}

impl Conv1d {
    pub fn new(
        store: &mut ParamStore,
        init: &mut Init,
        prefix: &str,
        kernel_size: usize,
        d_in: usize,
        d_out: usize,
    ) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::config(format!("{prefix}: conv1d kernel size must be odd, got {kernel_size}")));
        }
        let (kernel, bias) = (format!("{prefix}.kernel"), format!("{prefix}.b"));
        let k = init.xavier(kernel_size * d_in, d_out).reshape(&[kernel_size, d_in, d_out])?;
        store.insert(&kernel, k)?;
        store.insert(&bias, Tensor::zeros(&[d_out]))?;
        Ok(Self { kernel, bias, kernel_size })
    }

    pub fn kernel_name(&self) -> &str {
        &self.kernel
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        conv1d(x, ctx.param(&self.kernel)?, Some(ctx.param(&self.bias)?))
    }
}

/// Lookup table of `vocab` learned rows.
#[derive(Clone, Debug)]
pub struct Embedding {
    table: String,
    pub vocab: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, vocab: usize, d: usize) -> Result<Self> {
        let table = format!("{prefix}.table");
        store.insert(&table, init.normal(&[vocab, d], 1.0))?;
        Ok(Self { table, vocab })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, ids: &[usize]) -> Result<Var<'t>> {
        if let Some(bad) = ids.iter().find(|&&i| i >= self.vocab) {
            return Err(Error::data(format!("token index {bad} outside vocabulary of {}", self.vocab)));
        }
        ctx.param(&self.table)?.index_select(ids)
    }
}
