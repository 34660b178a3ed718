//! Every architectural and training hyperparameter, loadable from a TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossWeights;
use crate::nn::Activation;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub version: u32,
    pub model: ArchConfig,
    pub video: VideoConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub data: DataConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Embedding width d.
    pub d_model: usize,
    pub num_heads: usize,
    /// Feed-forward width as a multiple of d.
    pub ff_mult: usize,
    pub activation: Activation,
    /// Only active during training.
    pub dropout: f64,
    /// Sampled frames per clip (T).
    pub frames: usize,
    /// Actor queries (N).
    pub queries: usize,
    /// 0 disables the vision-language encoder.
    pub encoder_layers: usize,
    /// 0 disables the action decoder.
    pub decoder_layers: usize,
    pub max_prompt_len: usize,
    /// Temporal conv path over per-frame pooled features inside the encoder.
    pub fast_branch: bool,
    pub temporal_pe: bool,
    /// When off, decoder queries are plain learned embeddings.
    pub actor_fusion: bool,
    pub fusion_kernel: usize,
    /// Training-time attention over embedded ground-truth boxes.
    pub teacher_forcing: bool,
    pub num_actions: usize,
    pub num_groups: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VideoConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub grid_h: usize,
    pub grid_w: usize,
    pub frame_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
    SgdMomentum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    /// Hard cap on optimizer steps; 0 means epochs × batches per epoch.
    pub max_steps: usize,
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub weight_decay_start: f64,
    pub weight_decay_end: f64,
    /// Global gradient-norm clip; 0 turns clipping off.
    pub grad_clip: f64,
    pub momentum: f64,
    /// Evaluate every this many steps; 0 evaluates only at the end.
    pub eval_every: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub clips: usize,
    pub actors: usize,
    /// Frames rendered per synthetic clip before sampling.
    pub total_frames: usize,
    pub train_ratio: f64,
    /// Text prompt fed to the model for every clip.
    pub prompt: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            model: ArchConfig::default(),
            video: VideoConfig::default(),
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            d_model: 256,
            num_heads: 8,
            ff_mult: 4,
            activation: Activation::Gelu,
            dropout: 0.1,
            frames: 8,
            queries: 8,
            encoder_layers: 2,
            decoder_layers: 3,
            max_prompt_len: 16,
            fast_branch: true,
            temporal_pe: true,
            actor_fusion: true,
            fusion_kernel: 3,
            teacher_forcing: false,
            num_actions: 3,
            num_groups: 6,
        }
    }
}

impl Default for VideoConfig {
    fn default() -> Self {
        Self { height: 64, width: 64, channels: 1, grid_h: 8, grid_w: 8, frame_rate: 25.0 }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            optimizer: OptimizerKind::Adam,
            epochs: 30,
            batch_size: 4,
            max_steps: 0,
            peak_lr: 5e-4,
            warmup_epochs: 5,
            weight_decay_start: 0.04,
            weight_decay_end: 0.1,
            grad_clip: 1.0,
            momentum: 0.9,
            eval_every: 0,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            clips: 64,
            actors: 2,
            total_frames: 8,
            train_ratio: 0.8,
            prompt: "players spiking setting blocking".into(),
        }
    }
}

impl ModelConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ModelConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn grid_cells(&self) -> usize {
        self.video.grid_h * self.video.grid_w
    }

    pub fn d_ff(&self) -> usize {
        self.model.d_model * self.model.ff_mult
    }

    /// Index of the keyframe within the T sampled frames (the middle one).
    pub fn keyframe_slot(&self) -> usize {
        self.model.frames / 2
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        let v = &self.video;
        let t = &self.train;
        let fail = |msg: String| Err(Error::config(msg));
        if self.version != CONFIG_VERSION {
            return fail(format!("config version {} not supported (expected {CONFIG_VERSION})", self.version));
        }
        if m.d_model == 0 || m.num_heads == 0 || !m.d_model.is_multiple_of(m.num_heads) {
            return fail(format!("num_heads {} must divide d_model {}", m.num_heads, m.d_model));
        }
        if !m.d_model.is_multiple_of(8) {
            return fail(format!("d_model {} must be a multiple of 8 (box sinusoid encoding)", m.d_model));
        }
        if m.ff_mult == 0 {
            return fail("ff_mult must be ≥ 1".into());
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return fail(format!("dropout {} outside [0, 1)", m.dropout));
        }
        if m.frames == 0 || m.queries == 0 || m.max_prompt_len == 0 {
            return fail("frames, queries and max_prompt_len must be ≥ 1".into());
        }
        if m.fusion_kernel.is_multiple_of(2) {
            return fail(format!("fusion_kernel {} must be odd", m.fusion_kernel));
        }
        if m.num_actions == 0 || m.num_groups == 0 {
            return fail("num_actions and num_groups must be ≥ 1".into());
        }
        if v.grid_h == 0 || v.grid_w == 0 || !v.height.is_multiple_of(v.grid_h) || !v.width.is_multiple_of(v.grid_w) {
            return fail(format!("{}×{} raster not divisible by {}×{} grid", v.height, v.width, v.grid_h, v.grid_w));
        }
        if v.channels == 0 {
            return fail("channels must be ≥ 1".into());
        }
        if t.batch_size == 0 {
            return fail("batch_size must be ≥ 1".into());
        }
        if t.epochs > 0 && t.warmup_epochs >= t.epochs {
            return fail(format!("warmup_epochs {} must be below epochs {}", t.warmup_epochs, t.epochs));
        }
        if t.weight_decay_start > t.weight_decay_end {
            return fail("weight_decay_start must not exceed weight_decay_end".into());
        }
        if self.data.total_frames < m.frames {
            return fail(format!("total_frames {} < sampled frames {}", self.data.total_frames, m.frames));
        }
        if self.data.actors > m.queries {
            return fail(format!("{} actors exceed {} queries", self.data.actors, m.queries));
        }
        self.loss.validate()
    }

    /// Default configuration rendered as TOML with one comment per field.
    pub fn reference() -> String {
        REFERENCE.to_string()
    }
}

const REFERENCE: &str = r#"version = 1

[model]
d_model = 256          # embedding width d
num_heads = 8          # attention heads (must divide d_model)
ff_mult = 4            # feed-forward width = ff_mult * d_model
activation = "gelu"    # "gelu" | "relu"
dropout = 0.1          # training only
frames = 8             # sampled frames per clip (T)
queries = 8            # actor queries (N)
encoder_layers = 2     # 0 disables the vision-language encoder
decoder_layers = 3     # 0 disables the action decoder
max_prompt_len = 16    # longest accepted prompt, in tokens
fast_branch = true     # temporal conv path inside the encoder
temporal_pe = true     # sinusoidal frame-index encoding
actor_fusion = true    # false = plain learned decoder queries
fusion_kernel = 3      # odd conv kernel across actor rows
teacher_forcing = false
num_actions = 3
num_groups = 6

[video]
height = 64
width = 64
channels = 1
grid_h = 8             # patch grid rows (HW = grid_h * grid_w)
grid_w = 8
frame_rate = 25.0

[loss]
l1 = 5.0
giou = 2.0
group_ce = 1.0
action_bce = 1.0
aux_layers = true      # add box losses for every decoder layer

[train]
seed = 0
optimizer = "adam"     # "adam" | "sgd-momentum"
epochs = 30
batch_size = 4
max_steps = 0          # 0 = epochs * batches per epoch
peak_lr = 0.0005
warmup_epochs = 5
weight_decay_start = 0.04
weight_decay_end = 0.1
grad_clip = 1.0        # 0 disables clipping
momentum = 0.9
eval_every = 0         # 0 = evaluate at the end only

[data]
seed = 0
clips = 64
actors = 2
total_frames = 8
train_ratio = 0.8
prompt = "players spiking setting blocking"
"#;
