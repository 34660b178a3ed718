//! Deterministic synthetic scenes: moving rectangles whose intensity encodes
//! the actor's action, with the group activity derived by a fixed rule.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{make_splits, ActorAnnotation, LabelSpace, Sample, SceneAnnotation};
use crate::backbone::{sample_indices, VideoClip};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::tensor::Tensor;

/// Motion in normalized units per frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Motion {
    Stationary,
    Linear { vx: f64, vy: f64 },
    /// Horizontal sine sway.
    Oscillate { amplitude: f64, period: f64 },
}

impl Motion {
    fn offset(&self, t: usize) -> (f64, f64) {
        let t = t as f64;
        match *self {
            Motion::Stationary => (0.0, 0.0),
            Motion::Linear { vx, vy } => (vx * t, vy * t),
            Motion::Oscillate { amplitude, period } => (amplitude * (std::f64::consts::TAU * t / period).sin(), 0.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorScript {
    pub motion: Motion,
    pub action: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioScript {
    pub seed: u64,
    pub actors: Vec<ActorScript>,
}

impl ScenarioScript {
    /// Random motions and actions drawn from `seed`.
    pub fn random(seed: u64, actors: usize, num_actions: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5c21_9a7e_0001);
        let actors = (0..actors)
            .map(|_| {
                let motion = match rng.gen_range(0..3) {
                    0 => Motion::Stationary,
                    1 => Motion::Linear { vx: rng.gen_range(-0.03..0.03), vy: rng.gen_range(-0.02..0.02) },
                    _ => Motion::Oscillate { amplitude: rng.gen_range(0.02..0.06), period: rng.gen_range(4.0..10.0) },
                };
                ActorScript { motion, action: rng.gen_range(0..num_actions) }
            })
            .collect();
        Self { seed, actors }
    }
}

/// Modal action (ties → lowest index) on the side of the frame where its
/// performers stand on average. Groups are ordered `left-*` then `right-*`.
pub fn group_rule(actions: &[usize], keyframe_cx: &[f64], num_actions: usize) -> Result<usize> {
    if actions.is_empty() || actions.len() != keyframe_cx.len() {
        return Err(Error::contract("group rule needs one centre per actor and at least one actor"));
    }
    let mut counts = vec![0usize; num_actions];
    for &a in actions {
        counts[a] += 1;
    }
    let best = *counts.iter().max().unwrap();
    let modal = counts.iter().position(|&c| c == best).unwrap();
    let xs: Vec<f64> = actions.iter().zip(keyframe_cx).filter(|(&a, _)| a == modal).map(|(_, &x)| x).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let side = usize::from(mean >= 0.5);
    Ok(side * num_actions + modal)
}

/// Raster and timing of generated clips.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub keyframe: usize,
}

impl SceneSpec {
    /// Keyframe placed on the middle of the frames the model samples.
    pub fn from_config(cfg: &ModelConfig) -> Result<Self> {
        let keyframe = sample_indices(cfg.data.total_frames, cfg.model.frames)?[cfg.keyframe_slot()];
        Ok(Self {
            frames: cfg.data.total_frames,
            height: cfg.video.height,
            width: cfg.video.width,
            channels: cfg.video.channels,
            keyframe,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedScene {
    pub clip: VideoClip,
    pub annotation: SceneAnnotation,
    /// Placements redrawn because two actors' tubes touched.
    pub reseeds: u32,
}

const MAX_PLACEMENT_TRIES: u32 = 10_000;

/// Pixel rectangle `(x0, y0, w, h)` per frame.
type Track = Vec<(usize, usize, usize, usize)>;

fn place(rng: &mut ChaCha8Rng, motion: Motion, spec: &SceneSpec) -> Track {
    let (w_img, h_img) = (spec.width, spec.height);
    let w = rng.gen_range((w_img / 6).max(1)..=(w_img / 3).max(1));
    let h = rng.gen_range((h_img / 4).max(1)..=(h_img / 2).max(1));
    let x0 = rng.gen_range(0..=w_img - w) as f64;
    let y0 = rng.gen_range(0..=h_img - h) as f64;
    (0..spec.frames)
        .map(|t| {
            let (dx, dy) = motion.offset(t);
            let x = (x0 + (dx * w_img as f64).round()).clamp(0.0, (w_img - w) as f64) as usize;
            let y = (y0 + (dy * h_img as f64).round()).clamp(0.0, (h_img - h) as f64) as usize;
            (x, y, w, h)
        })
        .collect()
}

/// True when the rectangles touch or come within one pixel.
fn too_close(a: &Track, b: &Track) -> bool {
    a.iter().zip(b).any(|(&(ax, ay, aw, ah), &(bx, by, bw, bh))| {
        ax < bx + bw + 1 && bx < ax + aw + 1 && ay < by + bh + 1 && by < ay + ah + 1
    })
}

/// Intensity of an actor: the action sets a coarse level, the actor index a
/// small offset so every rectangle is distinct. With several channels the
/// action also picks the lit channel (`action % channels`).
fn intensity(action: usize, num_actions: usize, actor: usize) -> f64 {
    0.2 + 0.7 * (action + 1) as f64 / (num_actions + 1) as f64 + 0.02 * actor as f64
}

pub fn generate_scene(script: &ScenarioScript, spec: &SceneSpec, labels: &LabelSpace) -> Result<GeneratedScene> {
    let num_actions = labels.actions.len();
    if script.actors.is_empty() {
        return Err(Error::config("a scene needs at least one actor"));
    }
    if spec.frames == 0 || spec.keyframe >= spec.frames || spec.width < 6 || spec.height < 4 || spec.channels == 0 {
        return Err(Error::config(format!("unusable scene spec {spec:?}")));
    }
    if let Some(a) = script.actors.iter().find(|a| a.action >= num_actions) {
        return Err(Error::config(format!("scripted action {} outside {num_actions} classes", a.action)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(script.seed);
    let mut reseeds = 0;
    let tracks = loop {
        let tracks: Vec<Track> = script.actors.iter().map(|a| place(&mut rng, a.motion, spec)).collect();
        let clash = (0..tracks.len()).any(|i| (i + 1..tracks.len()).any(|j| too_close(&tracks[i], &tracks[j])));
        if !clash {
            break tracks;
        }
        reseeds += 1;
        if reseeds >= MAX_PLACEMENT_TRIES {
            return Err(Error::data(format!("could not place {} actors without overlap", tracks.len())));
        }
    };

    let (h_img, w_img, c) = (spec.height, spec.width, spec.channels);
    let mut pixels = vec![0.0; spec.frames * h_img * w_img * c];
    for (k, (track, actor)) in tracks.iter().zip(&script.actors).enumerate() {
        let value = intensity(actor.action, num_actions, k);
        let channel = actor.action % c;
        for (t, &(x0, y0, w, h)) in track.iter().enumerate() {
            for y in y0..y0 + h {
                let row = ((t * h_img + y) * w_img + x0) * c;
                for px in pixels[row..row + w * c].chunks_exact_mut(c) {
                    px[channel] = value;
                }
            }
        }
    }

    let actors: Vec<ActorAnnotation> = tracks
        .iter()
        .zip(&script.actors)
        .enumerate()
        .map(|(k, (track, a))| ActorAnnotation {
            track_id: k as u32,
            tube: track
                .iter()
                .map(|&(x, y, w, h)| {
                    let (wi, hi) = (w_img as f64, h_img as f64);
                    [(x as f64 + w as f64 / 2.0) / wi, (y as f64 + h as f64 / 2.0) / hi, w as f64 / wi, h as f64 / hi]
                })
                .collect(),
            actions: vec![a.action],
        })
        .collect();
    let acts: Vec<usize> = script.actors.iter().map(|a| a.action).collect();
    let cxs: Vec<f64> = actors.iter().map(|a| a.tube[spec.keyframe][0]).collect();
    let clip_id = format!("synth-{:016x}", script.seed);
    let annotation = SceneAnnotation {
        clip_id: clip_id.clone(),
        keyframe: spec.keyframe,
        actors,
        group_activity: group_rule(&acts, &cxs, num_actions)?,
        social_groups: Vec::new(),
        weak: false,
    };
    let clip = VideoClip { clip_id, frame_rate: 25.0, frames: Tensor::new(&[spec.frames, h_img, w_img, c], pixels)? };
    Ok(GeneratedScene { clip, annotation, reseeds })
}

/// The configured synthetic corpus: `data.clips` scenes with per-clip seeds
/// derived from `data.seed`.
pub fn generate_corpus(cfg: &ModelConfig, labels: &LabelSpace, exec: Exec) -> Result<Vec<GeneratedScene>> {
    let spec = SceneSpec::from_config(cfg)?;
    let base = cfg.data.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    exec.map_range(cfg.data.clips, |i| {
        let script = ScenarioScript::random(base.wrapping_add(i as u64), cfg.data.actors, labels.actions.len());
        let mut scene = generate_scene(&script, &spec, labels)?;
        scene.clip.frame_rate = cfg.video.frame_rate;
        Ok(scene)
    })
    .into_iter()
    .collect()
}

/// Generates the configured corpus, samples every clip to the model's frame
/// count and splits it by `data.train_ratio`.
pub fn synthetic_splits(cfg: &ModelConfig, labels: &LabelSpace, exec: Exec) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let samples = generate_corpus(cfg, labels, exec)?
        .into_iter()
        .map(|s| Sample::new(&s.clip, s.annotation, cfg.model.frames))
        .collect::<Result<Vec<_>>>()?;
    let r = cfg.data.train_ratio;
    make_splits(&samples, |s| &s.annotation.clip_id, (r, 1.0 - r), cfg.data.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(frames: usize, size: usize) -> SceneSpec {
        SceneSpec { frames, height: size, width: size, channels: 1, keyframe: frames / 2 }
    }

    #[test]
    fn stationary_tube_is_constant() {
        let labels = LabelSpace::synthetic(3).unwrap();
        let script = ScenarioScript { seed: 4, actors: vec![ActorScript { motion: Motion::Stationary, action: 1 }] };
        let scene = generate_scene(&script, &spec(6, 32), &labels).unwrap();
        let tube = &scene.annotation.actors[0].tube;
        assert!(tube.iter().all(|b| b == &tube[0]));
    }

    #[test]
    fn linear_motion_steps_by_velocity() {
        let labels = LabelSpace::synthetic(3).unwrap();
        let script = ScenarioScript { seed: 9, actors: vec![ActorScript { motion: Motion::Linear { vx: 0.1, vy: 0.0 }, action: 0 }] };
        let scene = generate_scene(&script, &spec(5, 100), &labels).unwrap();
        let tube = &scene.annotation.actors[0].tube;
        for t in 1..tube.len() {
            let step = tube[t][0] - tube[t - 1][0];
            let clamped = tube[t][0] + tube[t][2] / 2.0 >= 1.0 - 1e-12;
            assert!((step - 0.1).abs() < 1e-12 || clamped, "step {step} at {t}");
        }
    }

    #[test]
    fn group_rule_examples() {
        assert_eq!(group_rule(&[0, 0, 2], &[0.2, 0.3, 0.9], 3).unwrap(), 0);
        assert_eq!(group_rule(&[1, 2], &[0.8, 0.1], 3).unwrap(), 3 + 1);
        assert!(group_rule(&[], &[], 3).is_err());
    }
}
