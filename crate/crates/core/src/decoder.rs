//! Action decoder: refines actor queries against the shared representation
//! and emits per-layer box tubes plus action and group logits.

use crate::config::ModelConfig;
use crate::encoder::SharedRepresentation;
use crate::error::{Error, Result};
use crate::fusion::{ActorFusion, FusedActorFeatures, REFERENCE_BOX};
use crate::nn::{Ctx, FeedForward, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore};
use crate::tensor::{Tensor, Var};

pub const REF_OFFSETS: &str = "decoder.ref_offsets";
pub const LEARNED_QUERIES: &str = "decoder.queries";

fn inverse_sigmoid(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[derive(Clone, Debug)]
pub struct DecoderOutput<'t> {
    /// `[N, T, 4]` per layer.
    pub per_layer_boxes: Vec<Var<'t>>,
    /// `[N, d]` per layer.
    pub per_layer_actor_embeddings: Vec<Var<'t>>,
    /// `[N, T, 4]` tube of the reference boxes before any refinement.
    pub reference_boxes: Var<'t>,
    /// `[N, A]`.
    pub action_logits: Var<'t>,
    /// `[G]`.
    pub group_logits: Var<'t>,
    /// Actor rows the classifiers read, `[N, d]`.
    pub actor_embeddings: Var<'t>,
    /// Group row the group classifier reads, `[1, d]`.
    pub group_embedding: Var<'t>,
}

impl<'t> DecoderOutput<'t> {
    /// Boxes from the last layer, or the reference tube without layers.
    pub fn final_boxes(&self) -> Var<'t> {
        *self.per_layer_boxes.last().unwrap_or(&self.reference_boxes)
    }
}

/// Three-layer perceptron `d → d → d → 4`; the last layer starts at zero so
/// a fresh head leaves its input boxes unchanged.
#[derive(Clone, Debug)]
pub struct BoxHead {
    l1: Linear,
    l2: Linear,
    out: Linear,
}

impl BoxHead {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, d: usize) -> Result<Self> {
        Ok(Self {
            l1: Linear::new(store, init, &format!("{prefix}.l1"), d, d)?,
            l2: Linear::new(store, init, &format!("{prefix}.l2"), d, d)?,
            out: Linear::zeroed(store, &format!("{prefix}.out"), d, 4)?,
        })
    }

    pub fn forward<'t>(&self, ctx: &Ctx<'t>, x: Var<'t>) -> Result<Var<'t>> {
        let h = self.l1.forward(ctx, x)?.relu();
        let h = self.l2.forward(ctx, h)?.relu();
        self.out.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayer {
    self_norm: LayerNorm,
    pub self_attn: MultiHeadAttention,
    spatial_norm: LayerNorm,
    pub spatial_attn: MultiHeadAttention,
    temporal_norm: LayerNorm,
    pub temporal_attn: MultiHeadAttention,
    ffn_norm: LayerNorm,
    pub ffn: FeedForward,
    pub box_head: BoxHead,
}

impl DecoderLayer {
    pub fn new(store: &mut ParamStore, init: &mut Init, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let m = &cfg.model;
        let d = m.d_model;
        let attn = |store: &mut ParamStore, init: &mut Init, name: &str| {
            MultiHeadAttention::new(store, init, &format!("{prefix}.{name}"), d, m.num_heads)
        };
        Ok(Self {
            self_norm: LayerNorm::new(store, &format!("{prefix}.self_norm"), d)?,
            self_attn: attn(store, init, "self_attn")?,
            spatial_norm: LayerNorm::new(store, &format!("{prefix}.spatial_norm"), d)?,
            spatial_attn: attn(store, init, "spatial_attn")?,
            temporal_norm: LayerNorm::new(store, &format!("{prefix}.temporal_norm"), d)?,
            temporal_attn: attn(store, init, "temporal_attn")?,
            ffn_norm: LayerNorm::new(store, &format!("{prefix}.ffn_norm"), d)?,
            ffn: FeedForward::new(store, init, &format!("{prefix}.ffn"), d, cfg.d_ff(), m.activation)?,
            box_head: BoxHead::new(store, init, &format!("{prefix}.box_head"), d)?,
        })
    }

    /// Updates the `[N+1, d]` query rows (actors then the group row) and
    /// returns them with the per-frame spatial context `[T, N+1, d]`.
    fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        rows: Var<'t>,
        video: Var<'t>,
        temporal_keys: Var<'t>,
    ) -> Result<(Var<'t>, Var<'t>)> {
        let frames = video.shape()[0];
        let h = self.self_norm.forward(ctx, rows)?;
        let rows = rows.add(ctx.dropout(self.self_attn.forward(ctx, h, h, None)?)?)?;

        let h = self.spatial_norm.forward(ctx, rows)?.repeat(frames);
        let spatial = self.spatial_attn.forward(ctx, h, video, None)?;
        let rows = rows.add(ctx.dropout(spatial.mean_axis(0)?)?)?;

        let h = self.temporal_norm.forward(ctx, rows)?;
        let rows = rows.add(ctx.dropout(self.temporal_attn.forward(ctx, h, temporal_keys, None)?)?)?;

        let h = self.ffn_norm.forward(ctx, rows)?;
        let rows = rows.add(ctx.dropout(self.ffn.forward(ctx, h)?)?)?;
        Ok((rows, spatial))
    }
}

#[derive(Clone, Debug)]
pub struct ActionDecoder {
    pub layers: Vec<DecoderLayer>,
    memory_norm: LayerNorm,
    text_norm: LayerNorm,
    out_norm: LayerNorm,
    pub action_head: Linear,
    pub group_head: Linear,
    gt_embed: Option<Linear>,
    queries: usize,
    frames: usize,
    keyframe: usize,
}

impl ActionDecoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let m = &cfg.model;
        let d = m.d_model;
        store.insert(REF_OFFSETS, Tensor::zeros(&[m.queries, 4]))?;
        if !m.actor_fusion {
            store.insert(LEARNED_QUERIES, init.normal(&[m.queries, d], 1.0))?;
        }
        let layers = (0..m.decoder_layers)
            .map(|i| DecoderLayer::new(store, init, &format!("decoder.{i}"), cfg))
            .collect::<Result<Vec<_>>>()?;
        let gt_embed = if m.teacher_forcing {
            Some(Linear::new(store, init, "decoder.gt_embed", 4, d)?)
        } else {
            None
        };
        Ok(Self {
            layers,
            memory_norm: LayerNorm::new(store, "decoder.memory_norm", d)?,
            text_norm: LayerNorm::new(store, "decoder.text_norm", d)?,
            out_norm: LayerNorm::new(store, "decoder.out_norm", d)?,
            action_head: Linear::new(store, init, "decoder.action_head", d, m.num_actions)?,
            group_head: Linear::new(store, init, "decoder.group_head", d, m.num_groups)?,
            gt_embed,
            queries: m.queries,
            frames: m.frames,
            keyframe: cfg.keyframe_slot(),
        })
    }

    /// Reference boxes in logit space, `[N, 4]`: the fixed center box plus the
    /// learned per-query offsets.
    pub fn reference_logits<'t>(&self, ctx: &Ctx<'t>) -> Result<Var<'t>> {
        let base: Vec<f64> = REFERENCE_BOX.iter().map(|&p| inverse_sigmoid(p)).cycle().take(4 * self.queries).collect();
        ctx.constant(Tensor::new(&[self.queries, 4], base)?).add(ctx.param(REF_OFFSETS)?)
    }

    /// Current reference boxes, `[N, 4]`.
    pub fn reference_boxes<'t>(&self, ctx: &Ctx<'t>) -> Result<Var<'t>> {
        Ok(self.reference_logits(ctx)?.sigmoid())
    }

    /// Starting actor rows: fused features of the (detached) reference boxes,
    /// or plain learned queries when fusion is off.
    pub fn initial_queries<'t>(
        &self,
        ctx: &Ctx<'t>,
        vt: &SharedRepresentation<'t>,
        fusion: Option<&ActorFusion>,
    ) -> Result<FusedActorFeatures<'t>> {
        match fusion {
            Some(af) => af.forward(ctx, ctx.stop_gradient(self.reference_boxes(ctx)?), vt.text()?),
            None => Ok(FusedActorFeatures { bt_f: ctx.param(LEARNED_QUERIES)? }),
        }
    }

    pub fn classify_group<'t>(&self, ctx: &Ctx<'t>, group_row: Var<'t>) -> Result<Var<'t>> {
        let d = self.group_head.d_in;
        let g = self.group_head.d_out;
        self.group_head.forward(ctx, group_row.reshape(&[1, d])?)?.reshape(&[g])
    }

    pub fn classify_actions<'t>(&self, ctx: &Ctx<'t>, actors: Var<'t>) -> Result<Var<'t>> {
        self.action_head.forward(ctx, actors)
    }

    /// Runs the decoder stack.
    ///
    /// `teacher` holds ground-truth keyframe boxes `[M, 4]`; it is consulted
    /// only when the decoder was built with teacher forcing.
    pub fn decode<'t>(
        &self,
        ctx: &Ctx<'t>,
        vt: &SharedRepresentation<'t>,
        bt_f: FusedActorFeatures<'t>,
        fusion: Option<&ActorFusion>,
        teacher: Option<&Tensor>,
    ) -> Result<DecoderOutput<'t>> {
        let tape = ctx.tape;
        let n = self.queries;
        let bs = bt_f.bt_f.shape();
        if bs.len() != 2 || bs[0] != n {
            return Err(Error::dim(format!("decoder expects {n} actor rows, got {bs:?}")));
        }
        let d = bs[1];
        let video = self.memory_norm.forward(ctx, vt.video()?)?;
        let frames = video.shape()[0];
        if frames != self.frames {
            return Err(Error::contract(format!("decoder built for {} frames, got {frames}", self.frames)));
        }
        let text = vt.text()?;

        let mut key_parts = vec![video.mean_axis(1)?, self.text_norm.forward(ctx, text)?];
        if let (Some(embed), Some(gt)) = (&self.gt_embed, teacher) {
            key_parts.push(embed.forward(ctx, ctx.constant(gt.clone()))?);
        }
        let temporal_keys = tape.concat(&key_parts, 0)?;

        let tube = |logits: Var<'t>| -> Result<Var<'t>> { logits.repeat(frames).permute(&[1, 0, 2]) };
        let mut base = tube(self.reference_logits(ctx)?)?;
        let reference_boxes = base.sigmoid();

        let mut actors = bt_f.bt_f;
        let mut group = vt.group()?;
        let mut per_layer_boxes: Vec<Var<'t>> = Vec::with_capacity(self.layers.len());
        let mut per_layer_actor_embeddings = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            if let (Some(af), Some(prev)) = (fusion, per_layer_boxes.last()) {
                let kf = ctx.stop_gradient(prev.narrow(1, self.keyframe, 1)?.reshape(&[n, 4])?);
                actors = actors.add(af.forward(ctx, kf, text)?.bt_f)?;
            }
            let rows = tape.concat(&[actors, group], 0)?;
            let (rows, spatial) = layer.forward(ctx, rows, video, temporal_keys)?;
            actors = rows.narrow(0, 0, n)?;
            group = rows.narrow(0, n, 1)?;

            let per_frame = spatial.narrow(1, 0, n)?.permute(&[1, 0, 2])?;
            let tube_features = per_frame.add(actors.reshape(&[n, 1, d])?)?;
            let logits = base.add(layer.box_head.forward(ctx, tube_features)?)?;
            base = ctx.stop_gradient(logits);
            per_layer_boxes.push(logits.sigmoid());
            per_layer_actor_embeddings.push(actors);
        }

        if self.layers.is_empty() {
            // Without decoder layers the group readout also sees pooled video,
            // so a stack with no trained attention still has a visual signal.
            let pooled = video.mean_axis(1)?.mean_axis(0)?.reshape(&[1, d])?;
            group = group.add(pooled)?;
        }
        let actors = self.out_norm.forward(ctx, actors)?;
        let group = self.out_norm.forward(ctx, group)?;
        Ok(DecoderOutput {
            per_layer_boxes,
            per_layer_actor_embeddings,
            reference_boxes,
            action_logits: self.classify_actions(ctx, actors)?,
            group_logits: self.classify_group(ctx, group)?,
            actor_embeddings: actors,
            group_embedding: group,
        })
    }
}
