//! The full network: backbones, vision-language encoder, actor fusion and
//! action decoder wired together.

use crate::backbone::{TextEncoder, TextFeatures, TextPrompt, VideoClip, VideoFeatures, VisualEncoder, Vocabulary};
use crate::config::ModelConfig;
use crate::decoder::{ActionDecoder, DecoderOutput};
use crate::encoder::{SharedRepresentation, VlEncoder};
use crate::error::Result;
use crate::fusion::{ActorFusion, FusedActorFeatures};
use crate::nn::{Ctx, Init, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct ReactModel {
    pub cfg: ModelConfig,
    pub vocab: Vocabulary,
    pub visual: VisualEncoder,
    pub text: TextEncoder,
    pub encoder: VlEncoder,
    pub fusion: Option<ActorFusion>,
    pub decoder: ActionDecoder,
}

#[derive(Clone, Debug)]
pub struct ModelOutput<'t> {
    pub video: VideoFeatures<'t>,
    pub text: TextFeatures<'t>,
    pub shared: SharedRepresentation<'t>,
    pub fused: FusedActorFeatures<'t>,
    pub decoded: DecoderOutput<'t>,
}

impl ReactModel {
    /// Builds the network and a freshly initialized parameter store.
    pub fn new(cfg: &ModelConfig, vocab: Vocabulary, seed: u64) -> Result<(Self, ParamStore)> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init::new(seed);
        let visual = VisualEncoder::new(&mut store, &mut init, cfg)?;
        let text = TextEncoder::new(&mut store, &mut init, cfg, vocab.len())?;
        let encoder = VlEncoder::new(&mut store, &mut init, cfg)?;
        let fusion = if cfg.model.actor_fusion { Some(ActorFusion::new(&mut store, &mut init, cfg)?) } else { None };
        let decoder = ActionDecoder::new(&mut store, &mut init, cfg)?;
        let model = Self { cfg: cfg.clone(), vocab, visual, text, encoder, fusion, decoder };
        Ok((model, store))
    }

    pub fn tokenize(&self, prompt: &str) -> Result<TextPrompt> {
        self.vocab.tokenize(prompt)
    }

    /// Forward pass on a clip already sampled to `T` frames. `teacher` carries
    /// ground-truth keyframe boxes for teacher-forced training.
    pub fn forward<'t>(
        &self,
        ctx: &Ctx<'t>,
        clip: &VideoClip,
        prompt: &TextPrompt,
        teacher: Option<&Tensor>,
    ) -> Result<ModelOutput<'t>> {
        let video = self.visual.encode(ctx, clip)?;
        let text = self.text.encode(ctx, prompt)?;
        let shared = self.encoder.encode(ctx, video.v_f, text.t_f)?;
        let fused = self.decoder.initial_queries(ctx, &shared, self.fusion.as_ref())?;
        let decoded = self.decoder.decode(ctx, &shared, fused, self.fusion.as_ref(), teacher)?;
        Ok(ModelOutput { video, text, shared, fused, decoded })
    }
}
