//! Component ablations averaged over seeds.

use serde::{Deserialize, Serialize};

use super::trainer::{train, TrainOptions};
use crate::config::ModelConfig;
use crate::data::{synthetic_splits, LabelSpace};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationVariant {
    pub name: String,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub actor_fusion: bool,
}

impl AblationVariant {
    fn apply(&self, cfg: &ModelConfig) -> ModelConfig {
        let mut c = cfg.clone();
        c.model.encoder_layers = self.encoder_layers;
        c.model.decoder_layers = self.decoder_layers;
        c.model.actor_fusion = self.actor_fusion;
        c
    }
}

/// Feature-only baseline, encoder only, encoder + decoder, and the full model
/// without actor fusion.
pub fn default_variants(cfg: &ModelConfig) -> Vec<AblationVariant> {
    let (enc, dec) = (cfg.model.encoder_layers.max(1), cfg.model.decoder_layers.max(1));
    let v = |name: &str, e, d, af| AblationVariant { name: name.into(), encoder_layers: e, decoder_layers: d, actor_fusion: af };
    vec![
        v("features", 0, 0, true),
        v("encoder", enc, 0, true),
        v("encoder+decoder", enc, dec, true),
        v("no-actor-fusion", enc, dec, false),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub merged_mca: f64,
    pub mca: f64,
    pub mean_iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub rows: Vec<AblationRow>,
    /// Seed-averaged `(variant, merged MCA, mean IoU)` in variant order.
    pub means: Vec<(String, f64, f64)>,
}

impl AblationSummary {
    pub fn mean_of(&self, variant: &str) -> Option<f64> {
        self.means.iter().find(|m| m.0 == variant).map(|m| m.1)
    }
}

/// Trains every variant once per seed on the synthetic corpus for that seed
/// and reports final test metrics. Seeds drive both data and initialization.
pub fn run_ablation(cfg: &ModelConfig, variants: &[AblationVariant], seeds: &[u64], opts: &TrainOptions) -> Result<AblationSummary> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::config("ablation needs at least one variant and one seed"));
    }
    let labels = LabelSpace::synthetic(cfg.model.num_actions)?;
    let mut rows = Vec::new();
    for &seed in seeds {
        let mut base = cfg.clone();
        base.data.seed = seed;
        base.train.seed = seed;
        let (train_set, test_set) = synthetic_splits(&base, &labels, opts.exec)?;
        if test_set.is_empty() {
            return Err(Error::config("ablation needs a non-empty test split"));
        }
        for v in variants {
            let run_opts = TrainOptions { out_dir: opts.out_dir.as_ref().map(|d| d.join(format!("{}-seed{seed}", v.name))), ..opts.clone() };
            let out = train(&v.apply(&base), &labels, &train_set, &test_set, &run_opts)?;
            let report = out.final_eval.expect("test split is non-empty");
            rows.push(AblationRow { variant: v.name.clone(), seed, merged_mca: report.merged_mca, mca: report.mca, mean_iou: report.mean_iou });
        }
    }
    let means = variants
        .iter()
        .map(|v| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == v.name).collect();
            let k = mine.len() as f64;
            (v.name.clone(), mine.iter().map(|r| r.merged_mca).sum::<f64>() / k, mine.iter().map(|r| r.mean_iou).sum::<f64>() / k)
        })
        .collect();
    Ok(AblationSummary { rows, means })
}
