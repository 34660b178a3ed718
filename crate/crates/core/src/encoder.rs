//! Vision-language correlation encoder.
//!
//! Each layer runs, in order: text self-attention, per-cell temporal
//! self-attention over the video grid, video→text cross-attention,
//! text→video cross-attention and a shared feed-forward. A learnable group
//! token rides along with the video stream through every step.

use std::ops::Range;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Ctx, FeedForward, Init, LayerNorm, MultiHeadAttention, ParamStore};
use crate::tensor::Var;

pub const GROUP_TOKEN: &str = "encoder.group_token";

/// Row partition of a [`SharedRepresentation`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub frames: usize,
    pub cells: usize,
    pub text_len: usize,
}

impl Layout {
    pub fn video_rows(&self) -> Range<usize> {
        0..self.frames * self.cells
    }

    pub fn text_rows(&self) -> Range<usize> {
        let start = self.frames * self.cells;
        start..start + self.text_len
    }

    pub fn group_row(&self) -> usize {
        self.frames * self.cells + self.text_len
    }

    pub fn total_rows(&self) -> usize {
        self.group_row() + 1
    }
}

/// Fused rows `[(T·HW + L + 1) × d]`: video, then text, then the group token.
#[derive(Clone, Copy, Debug)]
pub struct SharedRepresentation<'t> {
    pub vt_f: Var<'t>,
    pub layout: Layout,
}

impl<'t> SharedRepresentation<'t> {
    pub fn new(video: Var<'t>, text: Var<'t>, group: Var<'t>) -> Result<Self> {
        let (vs, ts) = (video.shape(), text.shape());
        if vs.len() != 3 || ts.len() != 2 || group.shape() != [1, vs[2]] || ts[1] != vs[2] {
            return Err(Error::dim(format!(
                "shared representation from video {vs:?}, text {ts:?}, group {:?}",
                group.shape()
            )));
        }
        let d = vs[2];
        let layout = Layout { frames: vs[0], cells: vs[1], text_len: ts[0] };
        let flat = video.reshape(&[vs[0] * vs[1], d])?;
        let vt_f = video.tape().concat(&[flat, text, group], 0)?;
        Ok(Self { vt_f, layout })
    }

    fn width(&self) -> usize {
        self.vt_f.shape()[1]
    }

    /// Video rows reshaped to `[T, HW, d]`.
    pub fn video(&self) -> Result<Var<'t>> {
        let l = self.layout;
        if l.frames * l.cells == 0 {
            return Err(Error::contract("layout has no video rows"));
        }
        self.vt_f.narrow(0, 0, l.frames * l.cells)?.reshape(&[l.frames, l.cells, self.width()])
    }

    pub fn text(&self) -> Result<Var<'t>> {
        let r = self.layout.text_rows();
        self.vt_f.narrow(0, r.start, r.len())
    }

    pub fn group(&self) -> Result<Var<'t>> {
        self.vt_f.narrow(0, self.layout.group_row(), 1)
    }
}

/// Video→text then text→video cross-attention, each pre-norm with a residual.
#[derive(Clone, Debug)]
pub struct CrossModalBlock {
    v2t_query_norm: LayerNorm,
    v2t_key_norm: LayerNorm,
    pub v2t: MultiHeadAttention,
    t2v_query_norm: LayerNorm,
    t2v_key_norm: LayerNorm,
    pub t2v: MultiHeadAttention,
}

impl CrossModalBlock {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            v2t_query_norm: LayerNorm::new(store, &format!("{prefix}.v2t_qnorm"), d)?,
            v2t_key_norm: LayerNorm::new(store, &format!("{prefix}.v2t_knorm"), d)?,
            v2t: MultiHeadAttention::new(store, init, &format!("{prefix}.v2t"), d, heads)?,
            t2v_query_norm: LayerNorm::new(store, &format!("{prefix}.t2v_qnorm"), d)?,
            t2v_key_norm: LayerNorm::new(store, &format!("{prefix}.t2v_knorm"), d)?,
            t2v: MultiHeadAttention::new(store, init, &format!("{prefix}.t2v"), d, heads)?,
        })
    }

    /// `video_rows` is `[Rv, d]`, `text_rows` is `[L, d]`. Text attends to the
    /// already-updated video rows.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, video_rows: Var<'t>, text_rows: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let q = self.v2t_query_norm.forward(ctx, video_rows)?;
        let kv = self.v2t_key_norm.forward(ctx, text_rows)?;
        let video_rows = video_rows.add(ctx.dropout(self.v2t.forward(ctx, q, kv, None)?)?)?;

        let q = self.t2v_query_norm.forward(ctx, text_rows)?;
        let kv = self.t2v_key_norm.forward(ctx, video_rows)?;
        let text_rows = text_rows.add(ctx.dropout(self.t2v.forward(ctx, q, kv, None)?)?)?;
        Ok((video_rows, text_rows))
    }
}

#[derive(Clone, Debug)]
pub struct EncoderLayer {
    text_norm: LayerNorm,
    pub text_self: MultiHeadAttention,
    temporal_norm: LayerNorm,
    pub temporal_self: MultiHeadAttention,
    fast: Option<(LayerNorm, Conv1d)>,
    pub cross: CrossModalBlock,
    ffn_norm: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let m = &cfg.model;
        let d = m.d_model;
        let fast = if m.fast_branch {
            Some((
                LayerNorm::new(store, &format!("{prefix}.fast_norm"), d)?,
                Conv1d::new(store, init, &format!("{prefix}.fast_conv"), 3, d, d)?,
            ))
        } else {
            None
        };
        Ok(Self {
            text_norm: LayerNorm::new(store, &format!("{prefix}.text_norm"), d)?,
            text_self: MultiHeadAttention::new(store, init, &format!("{prefix}.text_self"), d, m.num_heads)?,
            temporal_norm: LayerNorm::new(store, &format!("{prefix}.temporal_norm"), d)?,
            temporal_self: MultiHeadAttention::new(store, init, &format!("{prefix}.temporal_self"), d, m.num_heads)?,
            fast,
            cross: CrossModalBlock::new(store, init, &format!("{prefix}.cross"), d, m.num_heads)?,
            ffn_norm: LayerNorm::new(store, &format!("{prefix}.ffn_norm"), d)?,
            ffn: FeedForward::new(store, init, &format!("{prefix}.ffn"), d, cfg.d_ff(), m.activation)?,
        })
    }

    /// One layer over video `[T, HW, d]`, text `[L, d]` and group token `[1, d]`.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        video: Var<'t>,
        text: Var<'t>,
        group: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>, Var<'t>)> {
        let tape = ctx.tape;
        let vs = video.shape();
        let (frames, cells, d) = (vs[0], vs[1], vs[2]);

        let h = self.text_norm.forward(ctx, text)?;
        let text = text.add(ctx.dropout(self.text_self.forward(ctx, h, h, None)?)?)?;

        // Temporal self-attention: each grid cell attends across its T copies
        // plus the group token; the group token attends over every video row.
        let by_cell = video.permute(&[1, 0, 2])?;
        let h = self.temporal_norm.forward(ctx, by_cell)?;
        let g = self.temporal_norm.forward(ctx, group)?;
        let keys = tape.concat(&[h, g.repeat(cells)], 1)?;
        let cell_update = self.temporal_self.forward(ctx, h, keys, None)?.permute(&[1, 0, 2])?;
        let group_keys = tape.concat(&[h.reshape(&[cells * frames, d])?, g], 0)?;
        let group_update = self.temporal_self.forward(ctx, g, group_keys, None)?;
        let mut video = video.add(ctx.dropout(cell_update)?)?;
        let group = group.add(ctx.dropout(group_update)?)?;

        if let Some((norm, conv)) = &self.fast {
            let pooled = norm.forward(ctx, video)?.mean_axis(1)?;
            let detail = conv.forward(ctx, pooled)?.reshape(&[frames, 1, d])?;
            video = video.add(detail)?;
        }

        let video_rows = tape.concat(&[video.reshape(&[frames * cells, d])?, group], 0)?;
        let (video_rows, text) = self.cross.forward(ctx, video_rows, text)?;

        let rows = tape.concat(&[video_rows, text], 0)?;
        let h = self.ffn_norm.forward(ctx, rows)?;
        let rows = rows.add(ctx.dropout(self.ffn.forward(ctx, h)?)?)?;

        let n_video = frames * cells;
        let video = rows.narrow(0, 0, n_video)?.reshape(&[frames, cells, d])?;
        let group = rows.narrow(0, n_video, 1)?;
        let text = rows.narrow(0, n_video + 1, text.shape()[0])?;
        Ok((video, text, group))
    }
}

#[derive(Clone, Debug)]
pub struct VlEncoder {
    pub layers: Vec<EncoderLayer>,
    d_model: usize,
}

impl VlEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.model.d_model;
        store.insert(GROUP_TOKEN, init.normal(&[1, d], 0.02))?;
        let layers = (0..cfg.model.encoder_layers)
            .map(|i| EncoderLayer::new(store, init, &format!("encoder.{i}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers, d_model: d })
    }

    /// Fuses `v_f [T, HW, d]` and `t_f [L, d]`. With no layers this is the plain
    /// concatenation of the inputs and the initial group token.
    pub fn encode<'t>(&self, ctx: &Ctx<'t>, v_f: Var<'t>, t_f: Var<'t>) -> Result<SharedRepresentation<'t>> {
        let (vs, ts) = (v_f.shape(), t_f.shape());
        if vs.len() != 3 || ts.len() != 2 || vs[2] != self.d_model || ts[1] != self.d_model {
            return Err(Error::dim(format!(
                "encoder expects [T, HW, {d}] and [L, {d}], got {vs:?} and {ts:?}",
                d = self.d_model
            )));
        }
        let (mut video, mut text, mut group) = (v_f, t_f, ctx.param(GROUP_TOKEN)?);
        for layer in &self.layers {
            (video, text, group) = layer.forward(ctx, video, text, group)?;
        }
        SharedRepresentation::new(video, text, group)
    }
}
