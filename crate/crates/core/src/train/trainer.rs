//! Training loop, evaluation, prediction export and prompt-based retrieval.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::optim::{clip_grad_norm, OptimizerHyper, OptimizerState};
use super::schedule::{lr_at, wd_at, ScheduleConfig};
use crate::backbone::{TextPrompt, Vocabulary};
use crate::config::ModelConfig;
use crate::data::{weak_supervision_view, LabelSpace, Sample};
use crate::error::{Error, Result};
use crate::loss::{iou, total_objective, BBox, LossReport};
use crate::metrics::{argmax, mca, mpca, multilabel_prf, retrieval_rank, softmax, ActorPrediction, MergeMap, PredictionRecord, Prf};
use crate::model::{ModelOutput, ReactModel};
use crate::nn::{Ctx, GradMap, ParamStore};
use crate::par::Exec;
use crate::tensor::kernels::sigmoid;
use crate::tensor::{Tape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupervisionMode {
    #[default]
    Full,
    /// Boxes and group labels only; action terms drop out of the objective.
    Weak,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub mode: SupervisionMode,
    pub exec: Exec,
    /// Receives `metrics.jsonl`, `best.ckpt` and `last.ckpt` when set.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub loss: f64,
    pub mca: f64,
    pub merged_mca: f64,
    pub mpca: f64,
    /// Mean keyframe IoU over ground-truth actors and their matched queries.
    pub mean_iou: f64,
    /// Per-actor action labels of matched queries.
    pub actions: Prf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LogRecord {
    Step {
        step: usize,
        epoch: usize,
        lr: f64,
        weight_decay: f64,
        loss: f64,
        l1: f64,
        giou: f64,
        group_ce: f64,
        action_bce: f64,
        grad_norm: f64,
    },
    Eval {
        step: usize,
        report: EvalReport,
    },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: ReactModel,
    pub store: ParamStore,
    pub optimizer: OptimizerState,
    pub log: Vec<LogRecord>,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_eval: Option<EvalReport>,
    pub best_eval: Option<(usize, EvalReport)>,
}

impl TrainOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.model.cfg.clone(),
            vocab: self.model.vocab.clone(),
            params: self.store.clone(),
            optimizer: Some(self.optimizer.clone()),
            step: self.steps as u64,
            seed: self.model.cfg.train.seed,
        }
    }

    /// The metrics log as JSON lines.
    pub fn log_text(&self) -> String {
        self.log.iter().map(|r| serde_json::to_string(r).expect("log serializes") + "\n").collect()
    }
}

fn supervision(sample: &Sample, mode: SupervisionMode) -> std::borrow::Cow<'_, Sample> {
    match mode {
        SupervisionMode::Full => std::borrow::Cow::Borrowed(sample),
        SupervisionMode::Weak => {
            std::borrow::Cow::Owned(Sample { clip: sample.clip.clone(), annotation: weak_supervision_view(&sample.annotation) })
        }
    }
}

/// Forward, objective and backward for one sample.
pub fn sample_gradients(
    model: &ReactModel,
    store: &ParamStore,
    sample: &Sample,
    prompt: &TextPrompt,
    mode: SupervisionMode,
    dropout_seed: u64,
) -> Result<(LossReport, GradMap)> {
    let cfg = &model.cfg;
    let sample = supervision(sample, mode);
    let targets = sample.annotation.targets(cfg.model.frames)?;
    let teacher = if cfg.model.teacher_forcing { Some(sample.annotation.keyframe_boxes()?) } else { None };
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store).with_dropout(cfg.model.dropout, dropout_seed);
    let out = model.forward(&ctx, &sample.clip, prompt, teacher.as_ref())?;
    let (loss, report) = total_objective(&out.decoded, &targets, &cfg.loss, cfg.keyframe_slot())?;
    let grads = tape.backward(loss)?;
    Ok((report, ctx.bound().collect_grads(&grads)))
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

struct LogSink {
    file: Option<BufWriter<File>>,
    records: Vec<LogRecord>,
}

impl LogSink {
    fn push(&mut self, r: LogRecord) -> Result<()> {
        if let Some(f) = &mut self.file {
            writeln!(f, "{}", serde_json::to_string(&r).expect("log serializes"))?;
            f.flush()?;
        }
        self.records.push(r);
        Ok(())
    }
}

/// Builds a fresh model from `cfg` and trains it.
pub fn train(cfg: &ModelConfig, labels: &LabelSpace, train_set: &[Sample], eval_set: &[Sample], opts: &TrainOptions) -> Result<TrainOutcome> {
    let (model, store) = ReactModel::new(cfg, Vocabulary::builtin(), cfg.train.seed)?;
    train_model(model, store, labels, train_set, eval_set, opts)
}

/// Seeded training loop: shuffled mini-batches, per-sample gradients summed
/// in sample order, global-norm clipping, scheduled optimizer steps and
/// periodic evaluation.
pub fn train_model(
    model: ReactModel,
    mut store: ParamStore,
    labels: &LabelSpace,
    train_set: &[Sample],
    eval_set: &[Sample],
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    let cfg = model.cfg.clone();
    let t = &cfg.train;
    if train_set.is_empty() {
        return Err(Error::data("empty training set"));
    }
    let prompt = model.tokenize(&cfg.data.prompt)?;
    let batch = t.batch_size.min(train_set.len());
    let steps_per_epoch = train_set.len().div_ceil(batch);
    let schedule = ScheduleConfig::from_train(t, steps_per_epoch)?;
    let total_steps = schedule.total_steps;
    let hyper = OptimizerHyper { momentum: t.momentum, ..OptimizerHyper::default() };
    let mut optimizer = OptimizerState::new(t.optimizer, hyper);

    if let Some(dir) = &opts.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let file = match &opts.out_dir {
        Some(dir) => Some(BufWriter::new(File::create(dir.join("metrics.jsonl"))?)),
        None => None,
    };
    let mut log = LogSink { file, records: Vec::new() };
    let snapshot = |store: &ParamStore, optimizer: &OptimizerState, step: usize| Checkpoint {
        config: cfg.clone(),
        vocab: model.vocab.clone(),
        params: store.clone(),
        optimizer: Some(optimizer.clone()),
        step: step as u64,
        seed: t.seed,
    };

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (mut initial_loss, mut final_loss) = (f64::NAN, f64::NAN);
    let mut best_eval: Option<(usize, EvalReport)> = None;
    let mut final_eval = None;
    let mut step = 0;
    'outer: for epoch in 0.. {
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(t.seed, epoch as u64)));
        for chunk in order.chunks(batch) {
            if step >= total_steps {
                break 'outer;
            }
            let results = opts.exec.map(chunk, |&i| {
                sample_gradients(&model, &store, &train_set[i], &prompt, opts.mode, mix(t.seed ^ 0xd20b, (step * train_set.len() + i) as u64))
            });
            let mut grads = store.zero_grads();
            let mut sum = LossReport::default();
            for r in results {
                let (report, g) = r?;
                for (name, v) in &g {
                    grads.get_mut(name).expect("gradient for a trainable parameter").add_assign(v);
                }
                sum.total += report.total;
                sum.l1 += report.l1;
                sum.giou += report.giou;
                sum.group_ce += report.group_ce;
                sum.action_bce += report.action_bce;
            }
            let n = chunk.len() as f64;
            for g in grads.values_mut() {
                g.scale(1.0 / n);
            }
            let loss = sum.total / n;
            let grad_norm = clip_grad_norm(&mut grads, t.grad_clip);
            if !loss.is_finite() || !grad_norm.is_finite() {
                if let Some(dir) = &opts.out_dir {
                    snapshot(&store, &optimizer, step).save(&dir.join("last.ckpt"))?;
                }
                return Err(Error::Numeric(format!("loss diverged at step {step} ({loss}); last good checkpoint kept")));
            }
            let (lr, wd) = (lr_at(step, &schedule), wd_at(step, &schedule));
            optimizer.step(&mut store, &grads, lr, wd)?;
            if step == 0 {
                initial_loss = loss;
            }
            final_loss = loss;
            log.push(LogRecord::Step {
                step,
                epoch,
                lr,
                weight_decay: wd,
                loss,
                l1: sum.l1 / n,
                giou: sum.giou / n,
                group_ce: sum.group_ce / n,
                action_bce: sum.action_bce / n,
                grad_norm,
            })?;
            step += 1;

            let periodic = t.eval_every > 0 && step % t.eval_every == 0 && step < total_steps;
            if periodic && !eval_set.is_empty() {
                let (report, _) = evaluate(&model, &store, labels, eval_set, opts.exec)?;
                let better = best_eval.as_ref().is_none_or(|(_, b)| (report.merged_mca, report.mean_iou) > (b.merged_mca, b.mean_iou));
                if better {
                    if let Some(dir) = &opts.out_dir {
                        snapshot(&store, &optimizer, step).save(&dir.join("best.ckpt"))?;
                    }
                    best_eval = Some((step, report.clone()));
                }
                log.push(LogRecord::Eval { step, report })?;
            }
        }
    }

    if !eval_set.is_empty() {
        let (report, _) = evaluate(&model, &store, labels, eval_set, opts.exec)?;
        let better = best_eval.as_ref().is_none_or(|(_, b)| (report.merged_mca, report.mean_iou) > (b.merged_mca, b.mean_iou));
        if better {
            if let Some(dir) = &opts.out_dir {
                snapshot(&store, &optimizer, step).save(&dir.join("best.ckpt"))?;
            }
            best_eval = Some((step, report.clone()));
        }
        log.push(LogRecord::Eval { step, report: report.clone() })?;
        final_eval = Some(report);
    }
    if let Some(dir) = &opts.out_dir {
        snapshot(&store, &optimizer, step).save(&dir.join("last.ckpt"))?;
    }
    Ok(TrainOutcome {
        model,
        store,
        optimizer,
        log: log.records,
        steps: step,
        initial_loss,
        final_loss,
        final_eval,
        best_eval,
    })
}

/// Inference-mode forward pass (no dropout, no teacher forcing).
pub fn infer<'t>(model: &ReactModel, ctx: &Ctx<'t>, sample: &Sample, prompt: &TextPrompt) -> Result<ModelOutput<'t>> {
    model.forward(ctx, &sample.clip, prompt, None)
}

/// Threshold on action probabilities for reporting an action (and a query as an actor).
pub const ACTION_THRESHOLD: f64 = 0.5;

struct SampleEval {
    loss: f64,
    group_pred: usize,
    ious: Vec<f64>,
    action_preds: Vec<Vec<usize>>,
    action_gts: Vec<Vec<usize>>,
    record: PredictionRecord,
}

fn evaluate_one(model: &ReactModel, store: &ParamStore, labels: &LabelSpace, sample: &Sample, prompt: &TextPrompt) -> Result<SampleEval> {
    let cfg = &model.cfg;
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    let out = infer(model, &ctx, sample, prompt)?;
    let targets = sample.annotation.targets(cfg.model.frames)?;
    let (_, report) = total_objective(&out.decoded, &targets, &cfg.loss, cfg.keyframe_slot())?;

    let group_probs = softmax(out.decoded.group_logits.value().data());
    let group_pred = argmax(&group_probs);
    let boxes = out.decoded.final_boxes().value();
    let frames = boxes.shape()[1];
    let kf = cfg.keyframe_slot();
    let box_at = |q: usize| BBox::from_slice(&boxes.data()[(q * frames + kf) * 4..(q * frames + kf) * 4 + 4]);
    let logits = out.decoded.action_logits.value();
    let action_set = |q: usize| -> Vec<usize> {
        logits.row(q).iter().enumerate().filter(|(_, &z)| sigmoid(z) > ACTION_THRESHOLD).map(|(a, _)| a).collect()
    };

    let matching = report.matches.last().expect("objective matches at least once");
    let mut ious = Vec::new();
    let (mut action_preds, mut action_gts) = (Vec::new(), Vec::new());
    for (gt, &q) in matching.assignment.iter().enumerate() {
        let gt_box = BBox::from_slice(&sample.annotation.actors[gt].tube[sample.annotation.keyframe]);
        ious.push(iou(&box_at(q), &gt_box)?);
        action_preds.push(action_set(q));
        action_gts.push(sample.annotation.actors[gt].actions.clone());
    }

    let actors = (0..logits.shape()[0])
        .filter_map(|q| {
            let acts = action_set(q);
            (!acts.is_empty()).then(|| ActorPrediction {
                labels: acts.iter().map(|&a| labels.actions[a].clone()).collect(),
                confidences: acts.iter().map(|&a| sigmoid(logits.row(q)[a])).collect(),
                keyframe_box: box_at(q).to_array(),
            })
        })
        .collect();
    let record = PredictionRecord {
        clip_id: sample.annotation.clip_id.clone(),
        group: labels.groups[group_pred].clone(),
        group_confidence: group_probs[group_pred],
        actors,
    };
    Ok(SampleEval { loss: report.total, group_pred, ious, action_preds, action_gts, record })
}

/// Metrics over `samples` plus one prediction record per clip.
pub fn evaluate(
    model: &ReactModel,
    store: &ParamStore,
    labels: &LabelSpace,
    samples: &[Sample],
    exec: Exec,
) -> Result<(EvalReport, Vec<PredictionRecord>)> {
    if samples.is_empty() {
        return Err(Error::data("empty evaluation set"));
    }
    let prompt = model.tokenize(&model.cfg.data.prompt)?;
    let evals = exec
        .map(samples, |s| evaluate_one(model, store, labels, s, &prompt))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let preds: Vec<usize> = evals.iter().map(|e| e.group_pred).collect();
    let gts: Vec<usize> = samples.iter().map(|s| s.annotation.group_activity).collect();
    let merge = merge_map_for(labels);
    let ious: Vec<f64> = evals.iter().flat_map(|e| e.ious.iter().copied()).collect();
    let action_preds: Vec<Vec<usize>> = evals.iter().flat_map(|e| e.action_preds.iter().cloned()).collect();
    let action_gts: Vec<Vec<usize>> = evals.iter().flat_map(|e| e.action_gts.iter().cloned()).collect();
    let report = EvalReport {
        loss: evals.iter().map(|e| e.loss).sum::<f64>() / evals.len() as f64,
        mca: mca(&preds, &gts, None)?,
        merged_mca: mca(&preds, &gts, merge.as_ref())?,
        mpca: mpca(&preds, &gts, None)?,
        mean_iou: ious.iter().sum::<f64>() / ious.len().max(1) as f64,
        actions: multilabel_prf(&action_preds, &action_gts)?,
    };
    Ok((report, evals.into_iter().map(|e| e.record).collect()))
}

/// Merge map matching a label space: side-merging for synthetic labels,
/// set/pass merging for Volleyball, none otherwise.
pub fn merge_map_for(labels: &LabelSpace) -> Option<MergeMap> {
    let a = labels.actions.len();
    if let Ok(synth) = LabelSpace::synthetic(a) {
        if &synth == labels {
            return Some(MergeMap::synthetic(a));
        }
    }
    (labels == &LabelSpace::volleyball()).then(MergeMap::volleyball)
}

/// A query ranked against a text prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedActor {
    pub query: usize,
    pub similarity: f64,
    #[serde(rename = "box")]
    pub keyframe_box: [f64; 4],
}

/// Ranks the decoder's actor queries for `sample` by cosine similarity to
/// the mean-pooled features of `prompt`.
pub fn rank_actors(model: &ReactModel, store: &ParamStore, sample: &Sample, prompt: &TextPrompt) -> Result<Vec<RankedActor>> {
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    let out = infer(model, &ctx, sample, prompt)?;
    let query = out.text.t_f.value();
    let d = query.shape()[1];
    let len = query.shape()[0];
    let pooled: Vec<f64> = (0..d).map(|c| (0..len).map(|r| query.data()[r * d + c]).sum::<f64>() / len as f64).collect();
    let actors = out.decoded.actor_embeddings.value();
    let boxes = out.decoded.final_boxes().value();
    let (frames, kf) = (boxes.shape()[1], model.cfg.keyframe_slot());
    let n = actors.shape()[0];
    let mut ranked: Vec<RankedActor> = (0..n)
        .map(|q| {
            let row = actors.row(q);
            let dot: f64 = row.iter().zip(&pooled).map(|(a, b)| a * b).sum();
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt() * pooled.iter().map(|x| x * x).sum::<f64>().sqrt();
            let start = (q * frames + kf) * 4;
            RankedActor {
                query: q,
                similarity: if norm == 0.0 { 0.0 } else { dot / norm },
                keyframe_box: boxes.data()[start..start + 4].try_into().unwrap(),
            }
        })
        .collect();
    ranked.sort_by(|a, b| b.similarity.total_cmp(&a.similarity).then(a.query.cmp(&b.query)));
    Ok(ranked)
}

/// R@K for action-name prompts: every ground-truth actor of every clip issues
/// the prompt "players <action>", and its matched query is the target among
/// that clip's queries.
pub fn retrieval_recall(
    model: &ReactModel,
    store: &ParamStore,
    labels: &LabelSpace,
    samples: &[Sample],
    ks: &[usize],
    exec: Exec,
) -> Result<Vec<(usize, f64)>> {
    let n = model.cfg.model.queries;
    if let Some(&k) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::config(format!("K = {k} with {n} candidate queries")));
    }
    let ranks = exec
        .map(samples, |s| -> Result<Vec<usize>> {
            let cfg = &model.cfg;
            let targets = s.annotation.targets(cfg.model.frames)?;
            let prompt = model.tokenize(&cfg.data.prompt)?;
            let tape = Tape::new();
            let ctx = Ctx::new(&tape, store);
            let out = infer(model, &ctx, s, &prompt)?;
            let (_, report) = total_objective(&out.decoded, &targets, &cfg.loss, cfg.keyframe_slot())?;
            let matched = &report.matches.last().expect("at least one matching").assignment;
            let mut ranks = Vec::new();
            for (gt, actor) in s.annotation.actors.iter().enumerate() {
                for &a in &actor.actions {
                    let query = model.tokenize(&format!("players {}", labels.actions[a]))?;
                    let tape = Tape::new();
                    let ctx = Ctx::new(&tape, store);
                    let out = infer(model, &ctx, s, &query)?;
                    let t = out.text.t_f.value();
                    let (len, d) = (t.shape()[0], t.shape()[1]);
                    let pooled: Vec<f64> = (0..d).map(|c| (0..len).map(|r| t.data()[r * d + c]).sum::<f64>() / len as f64).collect();
                    ranks.push(retrieval_rank(&pooled, &out.decoded.actor_embeddings.value(), matched[gt]));
                }
            }
            Ok(ranks)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .concat();
    if ranks.is_empty() {
        return Err(Error::data("no labelled actors to query"));
    }
    Ok(ks.iter().map(|&k| (k, ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)).collect())
}

/// Decoder outputs on one sample, for bit-level comparisons.
pub fn forward_fingerprint(model: &ReactModel, store: &ParamStore, sample: &Sample) -> Result<Vec<Tensor>> {
    let prompt = model.tokenize(&model.cfg.data.prompt)?;
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, store);
    let out = infer(model, &ctx, sample, &prompt)?;
    let d = &out.decoded;
    let mut v = vec![d.group_logits.value().as_ref().clone(), d.action_logits.value().as_ref().clone()];
    v.extend(d.per_layer_boxes.iter().map(|b| b.value().as_ref().clone()));
    Ok(v)
}
