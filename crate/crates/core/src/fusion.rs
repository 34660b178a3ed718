//! Actor fusion: blends current actor box positions with pooled text context.

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Ctx, Init, LayerNorm, Linear, ParamStore};
use crate::tensor::{Tensor, Var};

/// Where a set of actor boxes came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoxSource {
    ReferenceInit,
    LayerPrediction(usize),
    GroundTruth,
}

/// `N` normalized `(cx, cy, w, h)` boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct ActorBoxSet {
    pub boxes: Tensor,
    pub source: BoxSource,
}

/// Fused actor features `bt_f`, one row per actor query.
#[derive(Clone, Copy, Debug)]
pub struct FusedActorFeatures<'t> {
    pub bt_f: Var<'t>,
}

pub const REFERENCE_BOX: [f64; 4] = [0.5, 0.5, 0.1, 0.1];

/// `N` identical boxes at the image center.
pub fn reference_boxes(n: usize) -> Result<ActorBoxSet> {
    if n == 0 {
        return Err(Error::config("need at least one actor query"));
    }
    let data = REFERENCE_BOX.iter().copied().cycle().take(4 * n).collect();
    Ok(ActorBoxSet { boxes: Tensor::new(&[n, 4], data)?, source: BoxSource::ReferenceInit })
}

impl ActorBoxSet {
    pub fn validate(&self) -> Result<()> {
        let s = self.boxes.shape();
        if s.len() != 2 || s[1] != 4 {
            return Err(Error::dim(format!("actor boxes must be [N, 4], got {s:?}")));
        }
        validate_box_rows(self.boxes.data())
    }
}

fn validate_box_rows(data: &[f64]) -> Result<()> {
    for (i, b) in data.chunks_exact(4).enumerate() {
        if b[2] <= 0.0 || b[3] <= 0.0 {
            return Err(Error::contract(format!("box {i} is degenerate: {b:?}")));
        }
        if b.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::contract(format!("box {i} leaves the unit square: {b:?}")));
        }
    }
    Ok(())
}

/// Constant `[4, d/2]` matrix turning box coordinates into sinusoid phases.
/// Coordinate `i` owns columns `i·d/8 .. (i+1)·d/8` with geometric frequencies.
fn box_frequencies(d: usize) -> Tensor {
    let per = d / 8;
    let mut data = vec![0.0; 4 * (d / 2)];
    for coord in 0..4 {
        for j in 0..per {
            let freq = std::f64::consts::TAU / 10000f64.powf(j as f64 / per as f64);
            data[coord * (d / 2) + coord * per + j] = freq;
        }
    }
    Tensor::from_parts(vec![4, d / 2], data)
}

#[derive(Clone, Debug)]
pub struct ActorFusion {
    pub box_embed: Linear,
    text_norm: LayerNorm,
    pub refine: Conv1d,
    freqs: Tensor,
}

impl ActorFusion {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.model.d_model;
        Ok(Self {
            box_embed: Linear::new(store, init, "fusion.box_embed", 4, d)?,
            text_norm: LayerNorm::new(store, "fusion.text_norm", d)?,
            refine: Conv1d::new(store, init, "fusion.refine", cfg.model.fusion_kernel, d, d)?,
            freqs: box_frequencies(d),
        })
    }

    /// Linear box embedding plus sinusoidal coordinate encoding, `[N, d]`.
    pub fn embed_boxes<'t>(&self, ctx: &Ctx<'t>, boxes: Var<'t>) -> Result<Var<'t>> {
        let s = boxes.shape();
        if s.len() != 2 || s[1] != 4 {
            return Err(Error::dim(format!("actor boxes must be [N, 4], got {s:?}")));
        }
        if s[0] == 0 {
            return Err(Error::config("actor fusion needs N ≥ 1"));
        }
        validate_box_rows(boxes.value().data())?;
        let phases = boxes.matmul(ctx.constant(self.freqs.clone()))?;
        let sincos = ctx.tape.concat(&[phases.sin(), phases.cos()], 1)?;
        self.box_embed.forward(ctx, boxes)?.add(sincos)
    }

    /// Fusion on already-normalized text rows.
    ///
    /// Each box embedding is concatenated with the mean text row, the two
    /// `d`-wide halves are averaged, and a same-padded conv across the actor
    /// axis refines the result.
    pub fn fuse<'t>(&self, ctx: &Ctx<'t>, boxes: Var<'t>, text_normed: Var<'t>) -> Result<FusedActorFeatures<'t>> {
        let emb = self.embed_boxes(ctx, boxes)?;
        let n = emb.shape()[0];
        let d = emb.shape()[1];
        let pooled = text_normed.mean_axis(0)?.reshape(&[1, d])?.repeat(n).reshape(&[n, d])?;
        let joined = ctx.tape.concat(&[emb, pooled], 1)?;
        let averaged = joined.reshape(&[n, 2, d])?.mean_axis(1)?;
        Ok(FusedActorFeatures { bt_f: self.refine.forward(ctx, averaged)? })
    }

    /// Layer-normalizes the text rows, then fuses.
    pub fn forward<'t>(&self, ctx: &Ctx<'t>, boxes: Var<'t>, text: Var<'t>) -> Result<FusedActorFeatures<'t>> {
        let normed = self.text_norm.forward(ctx, text)?;
        self.fuse(ctx, boxes, normed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_boxes_are_centered_and_identical() {
        let one = reference_boxes(1).unwrap();
        assert_eq!(one.boxes.data(), &REFERENCE_BOX);
        assert_eq!(one.source, BoxSource::ReferenceInit);
        let many = reference_boxes(5).unwrap();
        for r in 0..5 {
            assert_eq!(many.boxes.row(r), &REFERENCE_BOX);
        }
        assert!(reference_boxes(0).is_err());
    }

    #[test]
    fn degenerate_boxes_rejected() {
        let set = ActorBoxSet { boxes: Tensor::new(&[1, 4], vec![0.5, 0.5, 0.0, 0.1]).unwrap(), source: BoxSource::GroundTruth };
        assert!(matches!(set.validate(), Err(Error::Contract(_))));
    }

    #[test]
    fn frequency_blocks_are_disjoint() {
        let f = box_frequencies(16);
        for coord in 0..4 {
            let nonzero: Vec<usize> = (0..8).filter(|&c| f.at(&[coord, c]) != 0.0).collect();
            assert_eq!(nonzero, vec![coord * 2, coord * 2 + 1]);
        }
    }
}
