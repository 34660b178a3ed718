//! Annotation schema, dataset loaders, splits and the synthetic scene generator.

mod corpus;
mod formats;
mod synth;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use corpus::{read_corpus, write_corpus, ANNOTATIONS_FILE, CLIPS_FILE};
pub use formats::{load_annotations, parse_annotations, write_native, AnnotationFormat, NATIVE_HEADER};
pub use synth::{generate_corpus, generate_scene, group_rule, synthetic_splits, ActorScript, GeneratedScene, Motion, ScenarioScript};

use crate::backbone::{sample_frames, sample_indices, VideoClip};
use crate::error::{Error, Result};
use crate::loss::LossTargets;
use crate::tensor::Tensor;

/// Action and group-activity names; labels are stored as indices into these.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub actions: Vec<String>,
    pub groups: Vec<String>,
}

pub const SYNTHETIC_ACTIONS: [&str; 6] = ["spiking", "setting", "blocking", "digging", "waiting", "moving"];

impl LabelSpace {
    pub fn new(actions: Vec<String>, groups: Vec<String>) -> Result<Self> {
        for list in [&actions, &groups] {
            let unique: BTreeSet<&String> = list.iter().collect();
            if unique.len() != list.len() || list.is_empty() {
                return Err(Error::config(format!("label list must be nonempty and unique: {list:?}")));
            }
        }
        Ok(Self { actions, groups })
    }

    /// `num_actions` actions and the `2·num_actions` groups `left-*`, `right-*`.
    pub fn synthetic(num_actions: usize) -> Result<Self> {
        if num_actions == 0 || num_actions > SYNTHETIC_ACTIONS.len() {
            return Err(Error::config(format!("synthetic data supports 1..={} actions", SYNTHETIC_ACTIONS.len())));
        }
        let actions: Vec<String> = SYNTHETIC_ACTIONS[..num_actions].iter().map(|s| s.to_string()).collect();
        let groups = ["left", "right"].iter().flat_map(|side| actions.iter().map(move |a| format!("{side}-{a}"))).collect();
        Self::new(actions, groups)
    }

    /// Public Volleyball label sets.
    pub fn volleyball() -> Self {
        let actions = ["waiting", "setting", "digging", "falling", "spiking", "blocking", "jumping", "moving", "standing"];
        let groups = ["r_set", "r_spike", "r-pass", "r_winpoint", "l_set", "l-spike", "l-pass", "l_winpoint"];
        Self { actions: actions.map(String::from).to_vec(), groups: groups.map(String::from).to_vec() }
    }

    pub fn action_index(&self, name: &str) -> Option<usize> {
        self.actions.iter().position(|a| a == name)
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.groups.iter().position(|g| g == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorAnnotation {
    pub track_id: u32,
    /// Normalized `(cx, cy, w, h)` per frame of the clip.
    pub tube: Vec<[f64; 4]>,
    pub actions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SocialGroup {
    pub members: Vec<u32>,
    pub activity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneAnnotation {
    pub clip_id: String,
    pub keyframe: usize,
    pub actors: Vec<ActorAnnotation>,
    pub group_activity: usize,
    pub social_groups: Vec<SocialGroup>,
    /// Action labels withheld; losses skip the action terms.
    pub weak: bool,
}

impl SceneAnnotation {
    pub fn num_frames(&self) -> usize {
        self.actors.first().map_or(0, |a| a.tube.len())
    }

    pub fn validate(&self, labels: &LabelSpace) -> Result<()> {
        let frames = self.num_frames();
        if self.group_activity >= labels.groups.len() {
            return Err(Error::data(format!("{}: group label {} unknown", self.clip_id, self.group_activity)));
        }
        if !self.actors.is_empty() && self.keyframe >= frames {
            return Err(Error::data(format!("{}: keyframe {} beyond {frames} frames", self.clip_id, self.keyframe)));
        }
        let mut ids = BTreeSet::new();
        for actor in &self.actors {
            if actor.tube.len() != frames {
                return Err(Error::data(format!("{}: tubes of unequal length", self.clip_id)));
            }
            if !ids.insert(actor.track_id) {
                return Err(Error::data(format!("{}: duplicate track id {}", self.clip_id, actor.track_id)));
            }
            for b in &actor.tube {
                check_box(b).map_err(|m| Error::data(format!("{}: track {}: {m}", self.clip_id, actor.track_id)))?;
            }
            if let Some(a) = actor.actions.iter().find(|&&a| a >= labels.actions.len()) {
                return Err(Error::data(format!("{}: action {a} unknown", self.clip_id)));
            }
        }
        let mut seen = BTreeSet::new();
        for g in &self.social_groups {
            if g.activity >= labels.groups.len() {
                return Err(Error::data(format!("{}: social-group label {} unknown", self.clip_id, g.activity)));
            }
            for m in &g.members {
                if !ids.contains(m) || !seen.insert(*m) {
                    return Err(Error::data(format!("{}: social groups must partition known actors (track {m})", self.clip_id)));
                }
            }
        }
        Ok(())
    }

    /// Loss targets over the `frames` uniformly sampled frames.
    pub fn targets(&self, frames: usize) -> Result<LossTargets> {
        if self.actors.is_empty() {
            return Err(Error::data(format!("{}: no annotated actors", self.clip_id)));
        }
        let idx = sample_indices(self.num_frames(), frames)?;
        let mut data = Vec::with_capacity(self.actors.len() * frames * 4);
        for actor in &self.actors {
            for &i in &idx {
                data.extend_from_slice(&actor.tube[i]);
            }
        }
        Ok(LossTargets {
            boxes: Tensor::new(&[self.actors.len(), frames, 4], data)?,
            actions: (!self.weak).then(|| self.actors.iter().map(|a| a.actions.clone()).collect()),
            group: self.group_activity,
        })
    }

    /// Keyframe boxes `[M, 4]`.
    pub fn keyframe_boxes(&self) -> Result<Tensor> {
        let data = self.actors.iter().flat_map(|a| a.tube[self.keyframe]).collect();
        Tensor::new(&[self.actors.len(), 4], data)
    }
}

pub(crate) fn check_box(b: &[f64; 4]) -> std::result::Result<(), String> {
    let [cx, cy, w, h] = *b;
    if !(w > 0.0 && h > 0.0) {
        return Err(format!("degenerate box {b:?}"));
    }
    let inside = |c: f64, s: f64| c - s / 2.0 >= -1e-9 && c + s / 2.0 <= 1.0 + 1e-9;
    if !(inside(cx, w) && inside(cy, h)) {
        return Err(format!("box {b:?} leaves the unit square"));
    }
    Ok(())
}

/// Same annotation with every action set emptied and the weak flag raised.
pub fn weak_supervision_view(annotation: &SceneAnnotation) -> SceneAnnotation {
    let mut out = annotation.clone();
    for actor in &mut out.actors {
        actor.actions.clear();
    }
    out.weak = true;
    out
}

/// Deterministic shuffled split by clip id.
pub fn make_splits<T: Clone>(
    items: &[T],
    clip_id: impl Fn(&T) -> &str,
    ratios: (f64, f64),
    seed: u64,
) -> Result<(Vec<T>, Vec<T>)> {
    if ratios.0 < 0.0 || ratios.1 < 0.0 || (ratios.0 + ratios.1 - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!("split ratios {ratios:?} must be non-negative and sum to 1")));
    }
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| clip_id(&items[a]).cmp(clip_id(&items[b])));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (ratios.0 * items.len() as f64).round() as usize;
    let train = order[..n_train].iter().map(|&i| items[i].clone()).collect();
    let test = order[n_train..].iter().map(|&i| items[i].clone()).collect();
    Ok((train, test))
}

/// A clip sampled to the model's frame count together with its annotation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub clip: VideoClip,
    pub annotation: SceneAnnotation,
}

impl Sample {
    /// Samples `frames` frames; the annotation keyframe must land on the middle slot.
    pub fn new(clip: &VideoClip, annotation: SceneAnnotation, frames: usize) -> Result<Self> {
        if clip.num_frames() != annotation.num_frames() {
            return Err(Error::data(format!(
                "{}: {} frames rendered, {} annotated",
                clip.clip_id,
                clip.num_frames(),
                annotation.num_frames()
            )));
        }
        let idx = sample_indices(clip.num_frames(), frames)?;
        if idx[frames / 2] != annotation.keyframe {
            return Err(Error::data(format!(
                "{}: keyframe {} is not the middle sampled frame {}",
                clip.clip_id,
                annotation.keyframe,
                idx[frames / 2]
            )));
        }
        Ok(Self { clip: sample_frames(clip, frames)?, annotation })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(id: &str) -> SceneAnnotation {
        SceneAnnotation {
            clip_id: id.into(),
            keyframe: 0,
            actors: vec![ActorAnnotation { track_id: 1, tube: vec![[0.5, 0.5, 0.2, 0.2]], actions: vec![0, 2] }],
            group_activity: 1,
            social_groups: vec![],
            weak: false,
        }
    }

    #[test]
    fn weak_view_only_drops_actions() {
        let a = toy("a");
        let w = weak_supervision_view(&a);
        assert!(w.actors[0].actions.is_empty());
        assert_eq!(w.actors[0].tube, a.actors[0].tube);
        assert_eq!(w.group_activity, a.group_activity);
        assert_eq!(weak_supervision_view(&w), w);
        assert!(w.targets(1).unwrap().actions.is_none());
    }

    #[test]
    fn splits() {
        let items: Vec<SceneAnnotation> = (0..10).map(|i| toy(&format!("c{i}"))).collect();
        fn id(a: &SceneAnnotation) -> &str {
            &a.clip_id
        }
        let (train, test) = make_splits(&items, id, (0.8, 0.2), 3).unwrap();
        assert_eq!((train.len(), test.len()), (8, 2));
        assert!(train.iter().all(|t| !test.iter().any(|s| s.clip_id == t.clip_id)));
        assert_eq!(make_splits(&items, id, (0.8, 0.2), 3).unwrap(), (train, test));
        let (all, none) = make_splits(&items, id, (1.0, 0.0), 3).unwrap();
        assert_eq!((all.len(), none.len()), (10, 0));
        assert!(matches!(make_splits(&items, id, (0.5, 0.2), 3), Err(Error::Config(_))));
    }

    #[test]
    fn validation_catches_bad_boxes_and_labels() {
        let labels = LabelSpace::synthetic(3).unwrap();
        assert!(toy("a").validate(&labels).is_ok());
        let mut bad = toy("a");
        bad.actors[0].tube[0] = [0.95, 0.5, 0.2, 0.2];
        assert!(matches!(bad.validate(&labels), Err(Error::Data(_))));
        let mut bad = toy("a");
        bad.actors[0].actions = vec![7];
        assert!(bad.validate(&labels).is_err());
    }

    #[test]
    fn synthetic_labels() {
        let l = LabelSpace::synthetic(3).unwrap();
        assert_eq!(l.groups, vec!["left-spiking", "left-setting", "left-blocking", "right-spiking", "right-setting", "right-blocking"]);
    }
}
