//! Finite-difference gradient suite over every differentiable op and every
//! network block, at toy sizes and double precision.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::backbone::{VideoClip, Vocabulary};
use crate::config::ModelConfig;
use crate::decoder::DecoderOutput;
use crate::encoder::SharedRepresentation;
use crate::error::Result;
use crate::fusion::FusedActorFeatures;
use crate::loss::{total_objective, LossTargets, LossWeights};
use crate::model::ReactModel;
use crate::nn::{Ctx, ParamStore};
use crate::par::Exec;
use crate::tensor::{grad_check_many, GradCheckReport, Tape, Tensor, Var};

/// Largest accepted relative error.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
const EPS: f64 = 1e-6;

pub type ScalarFn = for<'t> fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>;

/// Weighted sum with distinct weights so that symmetric errors cannot cancel.
pub fn weighted<'t>(tape: &'t Tape, v: Var<'t>) -> Result<Var<'t>> {
    let n = v.value().numel();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * (i % 11) as f64 - 0.05 * (i % 3) as f64).collect();
    let w = tape.constant(Tensor::new(&v.shape(), w)?);
    Ok(v.mul(w)?.sum())
}

/// Every differentiable op with the input shapes it is checked at.
pub fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, ScalarFn)> {
    vec![
        ("add", vec![vec![3, 4], vec![4]], |t, x| weighted(t, x[0].add(x[1])?)),
        ("sub", vec![vec![2, 3], vec![2, 3]], |t, x| weighted(t, x[0].sub(x[1])?)),
        ("mul", vec![vec![2, 1, 3], vec![4, 3]], |t, x| weighted(t, x[0].mul(x[1])?)),
        ("div", vec![vec![3, 2], vec![3, 2]], |t, x| weighted(t, x[0].div(x[1].mul(x[1])?.add_scalar(0.5))?)),
        ("maximum", vec![vec![5], vec![5]], |t, x| weighted(t, x[0].maximum(x[1])?)),
        ("minimum", vec![vec![5], vec![5]], |t, x| weighted(t, x[0].minimum(x[1])?)),
        ("scalar", vec![vec![4]], |t, x| weighted(t, x[0].mul_scalar(-1.7).add_scalar(0.2))),
        ("neg", vec![vec![4]], |t, x| weighted(t, x[0].neg())),
        ("relu", vec![vec![6]], |t, x| weighted(t, x[0].relu())),
        ("gelu", vec![vec![6]], |t, x| weighted(t, x[0].gelu())),
        ("sigmoid", vec![vec![6]], |t, x| weighted(t, x[0].sigmoid())),
        ("tanh", vec![vec![6]], |t, x| weighted(t, x[0].tanh())),
        ("exp", vec![vec![6]], |t, x| weighted(t, x[0].exp())),
        ("ln", vec![vec![6]], |t, x| weighted(t, x[0].mul(x[0])?.add_scalar(0.3).ln())),
        ("softplus", vec![vec![6]], |t, x| weighted(t, x[0].mul_scalar(4.0).softplus())),
        ("abs", vec![vec![6]], |t, x| weighted(t, x[0].abs())),
        ("sin", vec![vec![6]], |t, x| weighted(t, x[0].sin())),
        ("cos", vec![vec![6]], |t, x| weighted(t, x[0].cos())),
        ("sqrt", vec![vec![6]], |t, x| weighted(t, x[0].mul(x[0])?.add_scalar(0.1).sqrt())),
        ("matmul", vec![vec![2, 3, 4], vec![4, 5]], |t, x| weighted(t, x[0].matmul(x[1])?)),
        ("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], |t, x| weighted(t, x[0].bmm(x[1], false)?)),
        ("bmm_t", vec![vec![2, 3, 4], vec![2, 5, 4]], |t, x| weighted(t, x[0].bmm(x[1], true)?)),
        ("softmax0", vec![vec![4, 3]], |t, x| weighted(t, x[0].softmax(0)?)),
        ("softmax1", vec![vec![2, 4, 3]], |t, x| weighted(t, x[0].softmax(1)?)),
        ("log_softmax", vec![vec![3, 5]], |t, x| weighted(t, x[0].log_softmax(1)?)),
        ("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |t, x| weighted(t, x[0].layer_norm(x[1], x[2])?)),
        ("sum", vec![vec![2, 3]], |_, x| Ok(x[0].mul(x[0])?.sum())),
        ("mean", vec![vec![2, 3]], |_, x| Ok(x[0].mul(x[0])?.mean())),
        ("sum_axis", vec![vec![2, 3, 4]], |t, x| weighted(t, x[0].sum_axis(1)?)),
        ("mean_axis", vec![vec![2, 3, 4]], |t, x| weighted(t, x[0].mean_axis(2)?)),
        ("reshape", vec![vec![2, 6]], |t, x| weighted(t, x[0].reshape(&[3, 4])?)),
        ("permute", vec![vec![2, 3, 4]], |t, x| weighted(t, x[0].permute(&[2, 0, 1])?)),
        ("transpose", vec![vec![3, 4]], |t, x| weighted(t, x[0].transpose()?)),
        ("concat", vec![vec![2, 3], vec![2, 2]], |t, x| weighted(t, t.concat(&[x[0], x[1]], 1)?)),
        ("narrow", vec![vec![3, 5]], |t, x| weighted(t, x[0].narrow(1, 1, 3)?)),
        ("index_select", vec![vec![4, 3]], |t, x| weighted(t, x[0].index_select(&[3, 0, 3, 1])?)),
        ("repeat", vec![vec![2, 3]], |t, x| weighted(t, x[0].repeat(3))),
    ]
}

/// Toy configuration the block checks run at: d=8, T=2, HW=4, L=3, N=2.
pub fn toy_config() -> ModelConfig {
    let mut cfg = ModelConfig::default();
    let m = &mut cfg.model;
    m.d_model = 8;
    m.num_heads = 2;
    m.ff_mult = 2;
    m.dropout = 0.0;
    m.frames = 2;
    m.queries = 2;
    m.encoder_layers = 1;
    m.decoder_layers = 2;
    cfg.video.height = 4;
    cfg.video.width = 4;
    cfg.video.grid_h = 2;
    cfg.video.grid_w = 2;
    cfg.video.channels = 1;
    cfg.data.total_frames = 2;
    cfg.data.prompt = "players spiking blocking".into();
    cfg
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates sitting on a kink, excluded from the comparison.
    pub kinks: usize,
}

impl GradCheckEntry {
    fn from_report(name: impl Into<String>, r: GradCheckReport) -> Self {
        Self { name: name.into(), max_rel_error: r.max_rel_error, checked: r.checked, kinks: r.non_comparable.len() }
    }

    pub fn passes(&self) -> bool {
        self.checked > 0 && self.max_rel_error <= GRADCHECK_TOLERANCE
    }
}

/// Parameters whose names start with any of `prefixes`, in name order.
fn select(store: &ParamStore, prefixes: &[&str]) -> (Vec<String>, Vec<Tensor>) {
    store
        .iter()
        .filter(|(n, _)| prefixes.iter().any(|p| n.starts_with(p)))
        .map(|(n, p)| (n.to_string(), p.value.as_ref().clone()))
        .unzip()
}

/// Context whose first `names.len()` parameters come from `vars`, the rest
/// from `store` as constants.
fn ctx_for<'t>(tape: &'t Tape, store: &ParamStore, names: &[String], vars: &[Var<'t>]) -> Ctx<'t> {
    let mut bound: Vec<(String, Var<'t>)> =
        store.iter().map(|(n, p)| (n.to_string(), tape.constant(p.value.as_ref().clone()))).collect();
    for (n, &v) in names.iter().zip(vars) {
        bound.retain(|(m, _)| m != n);
        bound.push((n.clone(), v));
    }
    Ctx::with_vars(tape, bound).with_gradients_through_stops()
}

fn perturbed_store(model_store: &ParamStore, seed: u64) -> Result<ParamStore> {
    // Zero-initialized heads would hide gradient paths; give every tensor a
    // small random offset.
    let mut store = model_store.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for n in names {
        let v = store.get(&n).expect("listed parameter").clone();
        let noise = Tensor::uniform(v.shape(), -0.3, 0.3, &mut rng);
        let mut out = v;
        out.add_assign(&noise);
        store.set(&n, out)?;
    }
    Ok(store)
}

struct Toy {
    cfg: ModelConfig,
    model: ReactModel,
    store: ParamStore,
    clip: VideoClip,
    targets: LossTargets,
}

fn toy() -> Result<Toy> {
    let cfg = toy_config();
    let (model, store) = ReactModel::new(&cfg, Vocabulary::builtin(), 7)?;
    let store = perturbed_store(&store, 8)?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let clip = VideoClip { clip_id: "toy".into(), frame_rate: 25.0, frames: Tensor::uniform(&[2, 4, 4, 1], 0.0, 1.0, &mut rng) };
    let targets = LossTargets {
        boxes: Tensor::new(&[2, 2, 4], vec![0.3, 0.4, 0.2, 0.3, 0.32, 0.41, 0.2, 0.3, 0.7, 0.6, 0.25, 0.4, 0.68, 0.6, 0.25, 0.4])?,
        actions: Some(vec![vec![0], vec![1, 2]]),
        group: 4,
    };
    Ok(Toy { cfg, model, store, clip, targets })
}

fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn check_block(name: &str, inputs: &[Tensor], max_coords: Option<usize>, f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>) -> Result<GradCheckEntry> {
    Ok(GradCheckEntry::from_report(name, grad_check_many(f, inputs, EPS, max_coords)?))
}

fn block_checks(toy: &Toy) -> Result<Vec<GradCheckEntry>> {
    let Toy { cfg, model, store, clip, targets } = toy;
    let (d, t, hw, n) = (cfg.model.d_model, cfg.model.frames, cfg.grid_cells(), cfg.model.queries);
    let prompt = model.tokenize(&cfg.data.prompt)?;
    let len = prompt.tokens.len();
    let mut out = Vec::new();

    let (names, mut inputs) = select(store, &["visual.", "text."]);
    let k = names.len();
    out.push(check_block("backbones", &inputs, None, |tape, x| {
        let ctx = ctx_for(tape, store, &names[..k], &x[..k]);
        let v = model.visual.encode(&ctx, clip)?.v_f;
        let tf = model.text.encode(&ctx, &prompt)?.t_f;
        weighted(tape, v)?.add(weighted(tape, tf)?)
    })?);

    let (names, enc_params) = select(store, &["encoder."]);
    let k = names.len();
    inputs = enc_params;
    inputs.push(uniform(&[t, hw, d], -1.0, 1.0, 21));
    inputs.push(uniform(&[len, d], -1.0, 1.0, 22));
    out.push(check_block("encoder", &inputs, None, |tape, x| {
        let ctx = ctx_for(tape, store, &names, &x[..k]);
        let shared = model.encoder.encode(&ctx, x[k], x[k + 1])?;
        weighted(tape, shared.vt_f)
    })?);

    let (names, fusion_params) = select(store, &["fusion."]);
    let k = names.len();
    inputs = fusion_params;
    inputs.push(Tensor::new(&[n, 4], vec![0.3, 0.4, 0.2, 0.25, 0.7, 0.55, 0.15, 0.3])?);
    inputs.push(uniform(&[len, d], -1.0, 1.0, 23));
    let fusion = model.fusion.as_ref().expect("toy model uses actor fusion");
    out.push(check_block("actor-fusion", &inputs, None, |tape, x| {
        let ctx = ctx_for(tape, store, &names, &x[..k]);
        weighted(tape, fusion.forward(&ctx, x[k], x[k + 1])?.bt_f)
    })?);

    let (names, dec_params) = select(store, &["decoder.", "fusion."]);
    let k = names.len();
    inputs = dec_params;
    inputs.push(uniform(&[t, hw, d], -1.0, 1.0, 24));
    inputs.push(uniform(&[len, d], -1.0, 1.0, 25));
    inputs.push(uniform(&[1, d], -1.0, 1.0, 26));
    inputs.push(uniform(&[n, d], -1.0, 1.0, 27));
    out.push(check_block("decoder", &inputs, None, |tape, x| {
        let ctx = ctx_for(tape, store, &names, &x[..k]);
        let shared = SharedRepresentation::new(x[k], x[k + 1], x[k + 2])?;
        let dec = model.decoder.decode(&ctx, &shared, FusedActorFeatures { bt_f: x[k + 3] }, Some(fusion), None)?;
        let mut total = weighted(tape, dec.action_logits)?.add(weighted(tape, dec.group_logits)?)?;
        for b in dec.per_layer_boxes {
            total = total.add(weighted(tape, b)?)?;
        }
        Ok(total)
    })?);

    // Loss on free decoder outputs: two layers of box logits, action and group logits.
    let inputs = vec![
        uniform(&[n, t, 4], -1.5, 0.5, 28),
        uniform(&[n, t, 4], -1.5, 0.5, 29),
        uniform(&[n, t, 4], -1.5, 0.5, 30),
        uniform(&[n, cfg.model.num_actions], -2.0, 2.0, 31),
        uniform(&[cfg.model.num_groups], -2.0, 2.0, 32),
    ];
    let weights = LossWeights::default();
    out.push(check_block("losses", &inputs, None, |tape, x| {
        let dummy = tape.constant(Tensor::zeros(&[n, d]));
        let dec = DecoderOutput {
            per_layer_boxes: vec![x[0].sigmoid(), x[1].sigmoid()],
            per_layer_actor_embeddings: vec![dummy, dummy],
            reference_boxes: x[2].sigmoid(),
            action_logits: x[3],
            group_logits: x[4],
            actor_embeddings: dummy,
            group_embedding: tape.constant(Tensor::zeros(&[1, d])),
        };
        Ok(total_objective(&dec, targets, &weights, cfg.keyframe_slot())?.0)
    })?);

    let (names, all) = select(store, &[""]);
    out.push(check_block("end-to-end", &all, Some(4), |tape, x| {
        let ctx = ctx_for(tape, store, &names, x);
        let o = model.forward(&ctx, clip, &prompt, None)?;
        Ok(total_objective(&o.decoded, targets, &cfg.loss, cfg.keyframe_slot())?.0)
    })?);
    Ok(out)
}

/// Runs every op case on random inputs plus every block check; one entry each.
pub fn gradient_suite(exec: Exec) -> Result<Vec<GradCheckEntry>> {
    let cases = op_cases();
    let mut entries = exec
        .map(&cases, |(name, shapes, f)| -> Result<GradCheckEntry> {
            let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919);
            let mut worst = GradCheckEntry { name: format!("op:{name}"), max_rel_error: 0.0, checked: 0, kinks: 0 };
            for _ in 0..5 {
                let inputs: Vec<Tensor> = shapes.iter().map(|s| Tensor::uniform(s, -1.0, 1.0, &mut rng)).collect();
                let r = grad_check_many(*f, &inputs, EPS, None)?;
                worst.max_rel_error = worst.max_rel_error.max(r.max_rel_error);
                worst.checked += r.checked;
                worst.kinks += r.non_comparable.len();
            }
            Ok(worst)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    entries.extend(block_checks(&toy()?)?.into_iter().map(|mut e| {
        e.name = format!("block:{}", e.name);
        e
    }));
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_config_is_valid() {
        let cfg = toy_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.grid_cells(), 4);
    }

    #[test]
    fn weighted_sum_has_distinct_weights() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::ones(&[3]));
        let g = tape.backward(weighted(&tape, x).unwrap()).unwrap();
        let w = g.get(x).unwrap();
        assert!(w.data()[0] != w.data()[1] && w.data()[1] != w.data()[2]);
    }
}
