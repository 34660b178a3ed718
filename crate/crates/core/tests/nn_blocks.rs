use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use react_core::nn::{
    conv1d, sinusoid_table, Activation, AttentionMask, Ctx, FeedForward, Init, LayerNorm, MultiHeadAttention, ParamStore,
    PeKind, PositionalEncoding,
};
use react_core::tensor::{Tape, Tensor};
use react_core::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn rand_t(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn attention(d: usize, heads: usize, seed: u64) -> (MultiHeadAttention, ParamStore) {
    let mut store = ParamStore::new();
    let attn = MultiHeadAttention::new(&mut store, &mut Init::new(seed), "a", d, heads).unwrap();
    (attn, store)
}

fn set_identity(store: &mut ParamStore, prefix: &str, d: usize) {
    for p in ["q", "k", "v", "o"] {
        let mut eye = vec![0.0; d * d];
        for i in 0..d {
            eye[i * d + i] = 1.0;
        }
        store.set(&format!("{prefix}.{p}.w"), t(&[d, d], &eye)).unwrap();
        store.set(&format!("{prefix}.{p}.b"), Tensor::zeros(&[d])).unwrap();
    }
}

/// Scalar single-head attention with explicit loops, read straight from the store.
fn brute_force_attention(store: &ParamStore, q_rows: &Tensor, kv_rows: &Tensor) -> Vec<f64> {
    let d = q_rows.shape()[1];
    let lin = |name: &str, x: &[f64]| -> Vec<f64> {
        let w = store.get(&format!("a.{name}.w")).unwrap();
        let b = store.get(&format!("a.{name}.b")).unwrap();
        (0..d).map(|j| b.data()[j] + (0..d).map(|i| x[i] * w.data()[i * d + j]).sum::<f64>()).collect()
    };
    let lq = q_rows.shape()[0];
    let lk = kv_rows.shape()[0];
    let keys: Vec<Vec<f64>> = (0..lk).map(|r| lin("k", kv_rows.row(r))).collect();
    let vals: Vec<Vec<f64>> = (0..lk).map(|r| lin("v", kv_rows.row(r))).collect();
    let mut out = Vec::new();
    for r in 0..lq {
        let q = lin("q", q_rows.row(r));
        let scores: Vec<f64> = keys.iter().map(|k| q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() / (d as f64).sqrt()).collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let mixed: Vec<f64> = (0..d).map(|c| (0..lk).map(|j| e[j] / z * vals[j][c]).sum()).collect();
        out.extend(lin("o", &mixed));
    }
    out
}

#[test]
fn single_key_attention_returns_projected_value() {
    let (attn, store) = attention(4, 2, 1);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let q = ctx.constant(rand_t(&[3, 4], 2));
    let kv = ctx.constant(rand_t(&[1, 4], 3));
    let out = attn.forward(&ctx, q, kv, None).unwrap().value();
    let expected = attn.o.forward(&ctx, attn.v.forward(&ctx, kv).unwrap()).unwrap().value();
    for r in 0..3 {
        for c in 0..4 {
            assert!((out.row(r)[c] - expected.row(0)[c]).abs() < 1e-12);
        }
    }
}

#[test]
fn attention_is_invariant_to_key_order() {
    let (attn, store) = attention(4, 2, 4);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let q = ctx.constant(rand_t(&[2, 4], 5));
    let kv = rand_t(&[3, 4], 6);
    let a = attn.forward(&ctx, q, ctx.constant(kv.clone()), None).unwrap().value();
    let permuted = ctx.constant(kv).index_select(&[2, 0, 1]).unwrap();
    let b = attn.forward(&ctx, q, permuted, None).unwrap().value();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn identity_projection_matches_hand_softmax_mixture() {
    let (attn, mut store) = attention(2, 1, 0);
    set_identity(&mut store, "a", 2);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let q = ctx.constant(t(&[1, 2], &[1.0, 0.0]));
    let kv = ctx.constant(t(&[2, 2], &[1.0, 2.0, 3.0, -1.0]));
    let out = attn.forward(&ctx, q, kv, None).unwrap().value();
    let (s1, s2) = (1.0 / 2f64.sqrt(), 3.0 / 2f64.sqrt());
    let w1 = s1.exp() / (s1.exp() + s2.exp());
    let w2 = 1.0 - w1;
    assert!((out.data()[0] - (w1 * 1.0 + w2 * 3.0)).abs() < 1e-6);
    assert!((out.data()[1] - (w1 * 2.0 + -w2)).abs() < 1e-6);
}

#[test]
fn single_head_attention_matches_scalar_loops() {
    for case in 0..50u64 {
        let (attn, store) = attention(2, 1, 100 + case);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let q = rand_t(&[3, 2], 200 + case);
        let kv = rand_t(&[4, 2], 300 + case);
        let out = attn.forward(&ctx, ctx.constant(q.clone()), ctx.constant(kv.clone()), None).unwrap().value();
        let expected = brute_force_attention(&store, &q, &kv);
        for (a, b) in out.data().iter().zip(&expected) {
            assert!((a - b).abs() < 1e-6, "case {case}: {a} vs {b}");
        }
    }
}

#[test]
fn masked_attention_weights_sum_to_one_and_skip_masked_keys() {
    let (attn, store) = attention(4, 2, 9);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let mask = AttentionMask::new(2, 3, vec![true, false, true, false, true, false]).unwrap();
    let (_, w) = attn
        .forward_with_weights(&ctx, ctx.constant(rand_t(&[2, 4], 1)), ctx.constant(rand_t(&[3, 4], 2)), Some(&mask))
        .unwrap();
    let w = w.value();
    for head in 0..2 {
        for r in 0..2 {
            let row = &w.data()[(head * 2 + r) * 3..(head * 2 + r + 1) * 3];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            for (c, &p) in row.iter().enumerate() {
                if !mask.allowed[r * 3 + c] {
                    assert!(p < 1e-12);
                }
            }
        }
    }
}

#[test]
fn attention_errors() {
    assert!(matches!(AttentionMask::new(1, 2, vec![false, false]), Err(Error::Contract(_))));
    let (attn, store) = attention(4, 2, 0);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let bad = attn.forward(&ctx, ctx.constant(rand_t(&[2, 4], 1)), ctx.constant(rand_t(&[2, 3], 2)), None);
    assert!(matches!(bad, Err(Error::Dimension(_))));
    let mut s = ParamStore::new();
    assert!(matches!(MultiHeadAttention::new(&mut s, &mut Init::new(0), "x", 6, 4), Err(Error::Config(_))));
}

fn ffn(d: usize, d_ff: usize, act: Activation) -> (FeedForward, ParamStore) {
    let mut store = ParamStore::new();
    let f = FeedForward::new(&mut store, &mut Init::new(3), "f", d, d_ff, act).unwrap();
    (f, store)
}

#[test]
fn zero_weight_ffn_outputs_bias() {
    let (f, mut store) = ffn(3, 6, Activation::Gelu);
    store.set("f.up.w", Tensor::zeros(&[3, 6])).unwrap();
    store.set("f.down.w", Tensor::zeros(&[6, 3])).unwrap();
    store.set("f.down.b", t(&[3], &[0.5, -1.0, 2.0])).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let out = f.forward(&ctx, ctx.constant(rand_t(&[4, 3], 1))).unwrap().value();
    for r in 0..4 {
        assert_eq!(out.row(r), &[0.5, -1.0, 2.0]);
    }
}

#[test]
fn ffn_is_row_permutation_equivariant() {
    let (f, store) = ffn(4, 8, Activation::Gelu);
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let x = ctx.constant(rand_t(&[3, 4], 7));
    let a = f.forward(&ctx, x).unwrap().index_select(&[2, 0, 1]).unwrap().value();
    let b = f.forward(&ctx, x.index_select(&[2, 0, 1]).unwrap()).unwrap().value();
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn hand_set_relu_ffn() {
    let (f, mut store) = ffn(2, 2, Activation::Relu);
    store.set("f.up.w", t(&[2, 2], &[1.0, -1.0, 2.0, 1.0])).unwrap();
    store.set("f.up.b", t(&[2], &[0.0, 0.5])).unwrap();
    store.set("f.down.w", t(&[2, 2], &[1.0, 0.0, 1.0, 3.0])).unwrap();
    store.set("f.down.b", t(&[2], &[0.1, 0.2])).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    // x = [1, -1]: up = [1·1 + -1·2, 1·-1 + -1·1 + 0.5] = [-1, -1.5] → relu → [0, 0]
    // x = [2, 1]: up = [2 + 2, -2 + 1 + 0.5] = [4, -0.5] → relu → [4, 0] → down = [4.1, 0.2]
    let out = f.forward(&ctx, ctx.constant(t(&[2, 2], &[1.0, -1.0, 2.0, 1.0]))).unwrap().value();
    let expected = [0.1, 0.2, 4.1, 0.2];
    for (a, b) in out.data().iter().zip(expected) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn ffn_rejects_narrow_hidden_layer() {
    let mut store = ParamStore::new();
    assert!(FeedForward::new(&mut store, &mut Init::new(0), "f", 4, 2, Activation::Relu).is_err());
}

fn norm_of(x: Tensor) -> Tensor {
    let mut store = ParamStore::new();
    let d = x.shape()[x.ndim() - 1];
    let ln = LayerNorm::new(&mut store, "ln", d).unwrap();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    ln.forward(&ctx, ctx.constant(x)).unwrap().value().as_ref().clone()
}

#[test]
fn layer_norm_examples() {
    assert!(norm_of(t(&[1, 4], &[3.0; 4])).data().iter().all(|v| v.abs() < 1e-12));
    let y = norm_of(t(&[1, 2], &[1.0, 3.0]));
    assert!((y.data()[0] + 1.0).abs() < 1e-3 && (y.data()[1] - 1.0).abs() < 1e-3);
    let y = norm_of(rand_t(&[5, 7], 3));
    for r in 0..5 {
        assert!((y.row(r).iter().sum::<f64>() / 7.0).abs() <= 1e-6);
    }
}

fn conv(x: &[f64], kernel: &[f64], k: usize) -> Vec<f64> {
    let tape = Tape::new();
    let xv = tape.constant(t(&[x.len(), 1], x));
    let kv = tape.constant(t(&[k, 1, 1], kernel));
    conv1d(xv, kv, None).unwrap().value().data().to_vec()
}

#[test]
fn conv1d_examples() {
    let tape = Tape::new();
    let x = rand_t(&[5, 3], 1);
    let mut eye = vec![0.0; 9];
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let out = conv1d(tape.constant(x.clone()), tape.constant(t(&[1, 3, 3], &eye)), None).unwrap().value();
    assert_eq!(out.data(), x.data());

    let avg = conv(&[1.0, 2.0, 3.0, 4.0], &[1.0 / 3.0; 3], 3);
    let expected = [1.0, 2.0, 3.0, 7.0 / 3.0];
    for (a, b) in avg.iter().zip(expected) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv1d_even_kernel_is_config_error() {
    let tape = Tape::new();
    let r = conv1d(tape.constant(Tensor::zeros(&[3, 1])), tape.constant(Tensor::zeros(&[2, 1, 1])), None);
    assert!(matches!(r, Err(Error::Config(_))));
}

#[test]
fn positional_encoding_examples() {
    let store = ParamStore::new();
    let tape = Tape::new();
    let ctx = Ctx::new(&tape, &store);
    let x = rand_t(&[3, 4], 2);
    let zero = PositionalEncoding::fixed(PeKind::Learned, Tensor::zeros(&[5, 4]));
    let out = zero.encode(&ctx, ctx.constant(x.clone()), &[0, 1, 2]).unwrap().value();
    assert_eq!(out.data(), x.data());

    let pe = PositionalEncoding::temporal(4, 6);
    let out = pe.encode(&ctx, ctx.constant(Tensor::zeros(&[1, 6])), &[0]).unwrap().value();
    assert_eq!(out.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert_eq!(sinusoid_table(1, 4).data(), &[0.0, 1.0, 0.0, 1.0]);

    let overflow = pe.encode(&ctx, ctx.constant(Tensor::zeros(&[1, 6])), &[4]);
    assert!(matches!(overflow, Err(Error::Config(_))));
}

proptest! {
    #[test]
    fn conv1d_interior_is_translation_equivariant(xs in proptest::collection::vec(-5.0f64..5.0, 8), ks in proptest::collection::vec(-1.0f64..1.0, 3)) {
        let a = conv(&xs, &ks, 3);
        let mut shifted = vec![0.0];
        shifted.extend_from_slice(&xs[..7]);
        let b = conv(&shifted, &ks, 3);
        // outputs 0..=5 of the original land at 1..=6 after the shift; the last one sees padding
        for i in 0..6 {
            prop_assert!((a[i] - b[i + 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_rows_are_convex_weights(seed in 0u64..1000) {
        let (attn, store) = attention(4, 2, seed);
        let tape = Tape::new();
        let ctx = Ctx::new(&tape, &store);
        let (_, w) = attn.forward_with_weights(&ctx, ctx.constant(rand_t(&[3, 4], seed + 1)), ctx.constant(rand_t(&[5, 4], seed + 2)), None).unwrap();
        let w = w.value();
        for row in w.data().chunks(5) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
    }
}
