use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{sinusoid_table, sinusoid_table_2d, Ctx, Init, Linear, ParamStore};
use crate::tensor::{Tensor, Var};

/// Raw raster frames `[T_total, H, W, C]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoClip {
    pub clip_id: String,
    pub frame_rate: f64,
    pub frames: Tensor,
}

/// Visual features `v_f`, shaped `[T, HW, d]`.
#[derive(Clone, Copy, Debug)]
pub struct VideoFeatures<'t> {
    pub v_f: Var<'t>,
}

impl VideoClip {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    /// (height, width, channels)
    pub fn frame_dims(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[1], s[2], s[3])
    }
}

/// `count` uniformly spaced frame indices over `total`, first and last included.
///
/// Index `i` is `round(i·(total−1)/(count−1))`; a single sample takes the middle frame.
pub fn sample_indices(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(Error::data(format!("cannot sample {count} frames from {total}")));
    }
    if count == 1 {
        return Ok(vec![(total - 1) / 2]);
    }
    let step = (total - 1) as f64 / (count - 1) as f64;
    Ok((0..count).map(|i| (i as f64 * step).round() as usize).collect())
}

/// Keeps `count` uniformly spaced frames of `clip`.
pub fn sample_frames(clip: &VideoClip, count: usize) -> Result<VideoClip> {
    let idx = sample_indices(clip.num_frames(), count)?;
    let per_frame = clip.frames.numel() / clip.num_frames();
    let mut data = Vec::with_capacity(per_frame * count);
    for &i in &idx {
        data.extend_from_slice(&clip.frames.data()[i * per_frame..(i + 1) * per_frame]);
    }
    let mut shape = clip.frames.shape().to_vec();
    shape[0] = count;
    Ok(VideoClip { clip_id: clip.clip_id.clone(), frame_rate: clip.frame_rate, frames: Tensor::new(&shape, data)? })
}

/// Stand-in for a pretrained image backbone: per-cell linear patch projection
/// plus spatial (and optionally temporal) sinusoidal encodings.
#[derive(Clone, Debug)]
pub struct VisualEncoder {
    patch: Linear,
    grid: (usize, usize),
    spatial: Tensor,
    temporal: Option<Tensor>,
    frames: usize,
    d_model: usize,
}

impl VisualEncoder {
    pub fn new(store: &mut ParamStore, init: &mut Init, cfg: &ModelConfig) -> Result<Self> {
        let v = &cfg.video;
        let d = cfg.model.d_model;
        let patch_len = (v.height / v.grid_h) * (v.width / v.grid_w) * v.channels;
        Ok(Self {
            patch: Linear::new(store, init, "visual.patch", patch_len, d)?,
            grid: (v.grid_h, v.grid_w),
            spatial: sinusoid_table_2d(v.grid_h, v.grid_w, d)?,
            temporal: cfg.model.temporal_pe.then(|| sinusoid_table(cfg.model.frames, d)),
            frames: cfg.model.frames,
            d_model: d,
        })
    }

    /// Rearranges frames into `[T·HW, ph·pw·C]` patch rows (cell-major within a frame).
    pub fn patchify(&self, clip: &VideoClip) -> Result<Tensor> {
        let (h, w, c) = clip.frame_dims();
        let (gh, gw) = self.grid;
        if h % gh != 0 || w % gw != 0 {
            return Err(Error::config(format!("{h}×{w} frame not divisible by {gh}×{gw} grid")));
        }
        let (ph, pw) = (h / gh, w / gw);
        if ph * pw * c != self.patch.d_in {
            return Err(Error::dim(format!(
                "patch of {ph}×{pw}×{c} does not match projection input {}",
                self.patch.d_in
            )));
        }
        let t = clip.num_frames();
        let src = clip.frames.data();
        let mut data = Vec::with_capacity(src.len());
        for f in 0..t {
            for gy in 0..gh {
                for gx in 0..gw {
                    for y in 0..ph {
                        let row = ((f * h + gy * ph + y) * w + gx * pw) * c;
                        data.extend_from_slice(&src[row..row + pw * c]);
                    }
                }
            }
        }
        Tensor::new(&[t * gh * gw, ph * pw * c], data)
    }

    /// Linear patch features before any positional encoding, `[T, HW, d]`.
    pub fn patch_features<'t>(&self, ctx: &Ctx<'t>, clip: &VideoClip) -> Result<Var<'t>> {
        if clip.num_frames() != self.frames {
            return Err(Error::contract(format!(
                "clip {} has {} frames; sample it to {} first",
                clip.clip_id,
                clip.num_frames(),
                self.frames
            )));
        }
        let patches = ctx.constant(self.patchify(clip)?);
        let hw = self.grid.0 * self.grid.1;
        self.patch.forward(ctx, patches)?.reshape(&[self.frames, hw, self.d_model])
    }

    pub fn encode<'t>(&self, ctx: &Ctx<'t>, clip: &VideoClip) -> Result<VideoFeatures<'t>> {
        let mut v = self.patch_features(ctx, clip)?.add(ctx.constant(self.spatial.clone()))?;
        if let Some(table) = &self.temporal {
            let per_frame = table.reshape(&[self.frames, 1, self.d_model])?;
            v = v.add(ctx.constant(per_frame))?;
        }
        Ok(VideoFeatures { v_f: v })
    }
}
