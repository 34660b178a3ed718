//! Linear probing of frozen group embeddings.

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::optim::{OptimizerHyper, OptimizerState};
use super::schedule::{lr_at, ScheduleConfig};
use super::trainer::infer;
use crate::config::OptimizerKind;
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::metrics::argmax;
use crate::model::ReactModel;
use crate::nn::{Ctx, Init, Linear, ParamStore};
use crate::par::Exec;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 100, batch_size: 32, lr: 1e-3, momentum: 0.9, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub final_loss: f64,
}

/// Group embeddings `[S, d]` from the frozen model, one row per sample.
pub fn extract_features(model: &ReactModel, store: &ParamStore, samples: &[Sample], exec: Exec) -> Result<Tensor> {
    if samples.is_empty() {
        return Err(Error::data("no samples to extract features from"));
    }
    let prompt = model.tokenize(&model.cfg.data.prompt)?;
    let rows = exec
        .map(samples, |s| -> Result<Vec<f64>> {
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, store);
            Ok(infer(model, &ctx, s, &prompt)?.decoded.group_embedding.value().data().to_vec())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let d = rows[0].len();
    Tensor::new(&[rows.len(), d], rows.concat())
}

const HEAD: &str = "probe.head";

fn head_logits(store: &ParamStore, head: &Linear, features: &Tensor) -> Result<Tensor> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    Ok(head.forward(&ctx, ctx.constant(features.clone()))?.value().as_ref().clone())
}

fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels.iter().enumerate().filter(|&(i, &y)| argmax(logits.row(i)) == y).count();
    hits as f64 / labels.len() as f64
}

/// Trains a linear classifier on fixed features with momentum SGD and a
/// cosine learning-rate schedule. Returns the head parameters and the
/// training accuracy.
pub fn train_linear_head(features: &Tensor, labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<(ParamStore, ProbeReport)> {
    let s = features.shape();
    if s.len() != 2 || s[0] != labels.len() || s[0] == 0 {
        return Err(Error::dim(format!("features {s:?} do not match {} labels", labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::data(format!("label {y} outside {classes} classes")));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::config("probe needs at least one epoch and a positive batch size"));
    }
    let (n, d) = (s[0], s[1]);
    let mut store = ParamStore::new();
    let head = Linear::new(&mut store, &mut Init::new(cfg.seed), HEAD, d, classes)?;
    let batches: Vec<Vec<usize>> = (0..n).collect::<Vec<_>>().chunks(cfg.batch_size).map(<[usize]>::to_vec).collect();
    let schedule = ScheduleConfig::new(cfg.lr, 0, cfg.epochs * batches.len(), (0.0, 0.0))?;
    let mut opt = OptimizerState::new(OptimizerKind::SgdMomentum, OptimizerHyper { momentum: cfg.momentum, ..OptimizerHyper::default() });
    let mut final_loss = f64::NAN;
    let mut step = 0;
    for _ in 0..cfg.epochs {
        for batch in &batches {
            let x = Tensor::new(&[batch.len(), d], batch.iter().flat_map(|&i| features.row(i).to_vec()).collect())?;
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, &store);
            let logp = head.forward(&ctx, ctx.constant(x))?.log_softmax(1)?;
            let mut onehot = vec![0.0; batch.len() * classes];
            for (r, &i) in batch.iter().enumerate() {
                onehot[r * classes + labels[i]] = 1.0;
            }
            let loss = logp.mul(ctx.constant(Tensor::new(&[batch.len(), classes], onehot)?))?.sum().neg().mul_scalar(1.0 / batch.len() as f64);
            final_loss = loss.item();
            let grads = ctx.bound().collect_grads(&tape.backward(loss)?);
            opt.step(&mut store, &grads, lr_at(step, &schedule), 0.0)?;
            step += 1;
        }
    }
    let train_accuracy = accuracy(&head_logits(&store, &head, features)?, labels);
    Ok((store, ProbeReport { train_accuracy, test_accuracy: None, final_loss }))
}

/// Freezes the checkpointed model, extracts group embeddings and fits a
/// linear group classifier on them.
pub fn linear_probe(ckpt: &Checkpoint, train: &[Sample], test: &[Sample], cfg: &ProbeConfig, exec: Exec) -> Result<ProbeReport> {
    let (model, _) = ReactModel::new(&ckpt.config, ckpt.vocab.clone(), ckpt.seed)?;
    let mut store = ckpt.params.clone();
    store.freeze_all();
    let classes = ckpt.config.model.num_groups;
    let feats = extract_features(&model, &store, train, exec)?;
    let labels: Vec<usize> = train.iter().map(|s| s.annotation.group_activity).collect();
    let (head_store, mut report) = train_linear_head(&feats, &labels, classes, cfg)?;
    if !test.is_empty() {
        let head = Linear::new(&mut ParamStore::new(), &mut Init::new(0), HEAD, feats.shape()[1], classes)?;
        let test_feats = extract_features(&model, &store, test, exec)?;
        let test_labels: Vec<usize> = test.iter().map(|s| s.annotation.group_activity).collect();
        report.test_accuracy = Some(accuracy(&head_logits(&head_store, &head, &test_feats)?, &test_labels));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_features_are_learned() {
        let feats = Tensor::new(&[4, 2], vec![1.0, 0.0, 0.9, 0.1, 0.0, 1.0, 0.1, 0.9]).unwrap();
        let labels = [0, 0, 1, 1];
        let cfg = ProbeConfig { epochs: 200, lr: 0.5, batch_size: 4, ..ProbeConfig::default() };
        let (_, report) = train_linear_head(&feats, &labels, 2, &cfg).unwrap();
        assert_eq!(report.train_accuracy, 1.0);
    }

    #[test]
    fn mismatched_labels_rejected() {
        let feats = Tensor::zeros(&[3, 2]);
        assert!(train_linear_head(&feats, &[0, 1], 2, &ProbeConfig::default()).is_err());
        assert!(train_linear_head(&Tensor::zeros(&[2, 2]), &[0, 5], 2, &ProbeConfig::default()).is_err());
    }
}
