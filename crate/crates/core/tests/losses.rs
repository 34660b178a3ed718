use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use react_core::decoder::DecoderOutput;
use react_core::loss::{giou, hungarian_match, iou, match_cost, pairwise_giou, total_objective, BBox, LossTargets, LossWeights};
use react_core::tensor::{Tape, Tensor};

fn random_box(rng: &mut ChaCha8Rng) -> BBox {
    BBox::new(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.05..0.5), rng.gen_range(0.05..0.5))
}

fn inside(b: &BBox, x: f64, y: f64) -> bool {
    let c = b.corners();
    x >= c[0] && x < c[2] && y >= c[1] && y < c[3]
}

/// gIoU estimated by sampling a 1000 × 1000 lattice over the enclosing hull.
fn raster_giou(a: &BBox, b: &BBox) -> f64 {
    let (ca, cb) = (a.corners(), b.corners());
    let (x0, y0) = (ca[0].min(cb[0]), ca[1].min(cb[1]));
    let (x1, y1) = (ca[2].max(cb[2]), ca[3].max(cb[3]));
    let n = 1000;
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..n {
        let x = x0 + (i as f64 + 0.5) / n as f64 * (x1 - x0);
        for j in 0..n {
            let y = y0 + (j as f64 + 0.5) / n as f64 * (y1 - y0);
            let (ia, ib) = (inside(a, x, y), inside(b, x, y));
            inter += usize::from(ia && ib);
            union += usize::from(ia || ib);
        }
    }
    let hull = (n * n) as f64;
    inter as f64 / union as f64 - (hull - union as f64) / hull
}

#[test]
fn giou_matches_raster_estimate() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..100 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let exact = giou(&a, &b).unwrap();
        let est = raster_giou(&a, &b);
        assert!((exact - est).abs() < 5e-3, "case {case}: {exact} vs {est}");
    }
}

#[test]
fn differentiable_giou_agrees_with_scalar_giou() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs: Vec<(BBox, BBox)> = (0..20).map(|_| (random_box(&mut rng), random_box(&mut rng))).collect();
    let tape = Tape::new();
    let to_var = |bs: Vec<BBox>| tape.constant(Tensor::new(&[bs.len(), 4], bs.iter().flat_map(|b| b.to_array()).collect()).unwrap());
    let g = pairwise_giou(to_var(pairs.iter().map(|p| p.0).collect()), to_var(pairs.iter().map(|p| p.1).collect())).unwrap();
    for (i, (a, b)) in pairs.iter().enumerate() {
        assert!((g.value().data()[i] - giou(a, b).unwrap()).abs() < 1e-12);
    }
}

/// Every ordered choice of `m` distinct columns out of `n`.
fn arrangements(n: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for prefix in arrangements(n, m - 1) {
        for j in (0..n).filter(|j| !prefix.contains(j)) {
            let mut p = prefix.clone();
            p.push(j);
            out.push(p);
        }
    }
    out
}

fn brute_force_min(cost: &[f64], m: usize, n: usize) -> f64 {
    arrangements(n, m).into_iter().map(|cols| cols.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>()).fold(f64::INFINITY, f64::min)
}

#[test]
fn hungarian_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let n = rng.gen_range(1..=6);
        let m = rng.gen_range(1..=n);
        // a coarse value grid produces plenty of ties
        let cost: Vec<f64> = (0..m * n).map(|_| f64::from(rng.gen_range(0..5u8)) * 0.5).collect();
        let result = hungarian_match(&Tensor::new(&[m, n], cost.clone()).unwrap()).unwrap();
        let best = brute_force_min(&cost, m, n);
        assert!((result.total_cost - best).abs() < 1e-9, "case {case}");
        let mut cols = result.assignment.clone();
        cols.sort_unstable();
        cols.dedup();
        assert_eq!(cols.len(), m);
    }
}

fn tensor(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor::new(shape, data).unwrap()
}

/// Objective recomputed by hand for a single decoder layer and one frame.
#[test]
fn objective_matches_hand_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let weights = LossWeights { aux_layers: false, ..LossWeights::default() };
    for _ in 0..20 {
        let (n, m, a, g) = (3, 2, 3, 4);
        let preds: Vec<BBox> = (0..n).map(|_| random_box(&mut rng)).collect();
        let gts: Vec<BBox> = (0..m).map(|_| random_box(&mut rng)).collect();
        let logits: Vec<f64> = (0..n * a).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let glogits: Vec<f64> = (0..g).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let acts = vec![vec![0], vec![1, 2]];
        let group = 2;

        let tape = Tape::new();
        let tube = tape.constant(tensor(&[n, 1, 4], preds.iter().flat_map(|b| b.to_array()).collect()));
        let zero = tape.constant(Tensor::zeros(&[n, 4]));
        let out = DecoderOutput {
            per_layer_boxes: vec![tube],
            per_layer_actor_embeddings: vec![zero],
            reference_boxes: tube,
            action_logits: tape.constant(tensor(&[n, a], logits.clone())),
            group_logits: tape.constant(tensor(&[g], glogits.clone())),
            actor_embeddings: zero,
            group_embedding: zero,
        };
        let targets = LossTargets {
            boxes: tensor(&[m, 1, 4], gts.iter().flat_map(|b| b.to_array()).collect()),
            actions: Some(acts.clone()),
            group,
        };
        let (total, report) = total_objective(&out, &targets, &weights, 0).unwrap();

        let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
        let pair_cost = |i: usize, j: usize| {
            let l1: f64 = preds[j].to_array().iter().zip(gts[i].to_array()).map(|(p, q)| (p - q).abs()).sum();
            let conf = acts[i].iter().map(|&k| sig(logits[j * a + k])).sum::<f64>() / acts[i].len() as f64;
            5.0 * l1 + 2.0 * (1.0 - giou(&preds[j], &gts[i]).unwrap()) + (1.0 - conf)
        };
        let best = arrangements(n, m)
            .into_iter()
            .min_by(|x, y| {
                let c = |p: &Vec<usize>| p.iter().enumerate().map(|(i, &j)| pair_cost(i, j)).sum::<f64>();
                c(x).partial_cmp(&c(y)).unwrap()
            })
            .unwrap();
        let l1 = best.iter().enumerate().map(|(i, &j)| preds[j].to_array().iter().zip(gts[i].to_array()).map(|(p, q)| (p - q).abs()).sum::<f64>()).sum::<f64>()
            / (4 * m) as f64;
        let gl = best.iter().enumerate().map(|(i, &j)| 1.0 - giou(&preds[j], &gts[i]).unwrap()).sum::<f64>() / m as f64;
        let lse = glogits.iter().map(|z| z.exp()).sum::<f64>().ln();
        let ce = lse - glogits[group];
        let mut bce = 0.0;
        for j in 0..n {
            for k in 0..a {
                let y = best.iter().position(|&p| p == j).is_some_and(|i| acts[i].contains(&k));
                let p = sig(logits[j * a + k]);
                bce -= if y { p.ln() } else { (1.0 - p).ln() };
            }
        }
        bce /= (n * a) as f64;

        assert_eq!(report.matches[0].assignment, best);
        assert!((report.l1 - 5.0 * l1).abs() < 1e-9);
        assert!((report.giou - 2.0 * gl).abs() < 1e-9);
        assert!((report.group_ce - ce).abs() < 1e-9);
        assert!((report.action_bce - bce).abs() < 1e-9);
        assert!((total.item() - (5.0 * l1 + 2.0 * gl + ce + bce)).abs() < 1e-9);
    }
}

#[test]
fn weak_targets_drop_the_action_term() {
    let tape = Tape::new();
    let tube = tape.constant(tensor(&[2, 1, 4], vec![0.3, 0.3, 0.2, 0.2, 0.7, 0.7, 0.2, 0.2]));
    let zero = tape.constant(Tensor::zeros(&[2, 4]));
    let out = DecoderOutput {
        per_layer_boxes: vec![tube],
        per_layer_actor_embeddings: vec![zero],
        reference_boxes: tube,
        action_logits: tape.constant(tensor(&[2, 2], vec![3.0, -1.0, 0.5, 2.0])),
        group_logits: tape.constant(tensor(&[2], vec![0.0, 1.0])),
        actor_embeddings: zero,
        group_embedding: zero,
    };
    let targets = LossTargets { boxes: tensor(&[1, 1, 4], vec![0.7, 0.7, 0.2, 0.2]), actions: None, group: 1 };
    let (_, report) = total_objective(&out, &targets, &LossWeights::default(), 0).unwrap();
    assert_eq!(report.action_bce, 0.0);
    assert_eq!(report.matches[0].assignment, vec![1]);
    assert!(report.l1.abs() < 1e-12 && report.giou.abs() < 1e-12);
    let cost = match_cost(&tensor(&[2, 4], vec![0.3, 0.3, 0.2, 0.2, 0.7, 0.7, 0.2, 0.2]), &Tensor::zeros(&[2, 2]), &targets.boxes.reshape(&[1, 4]).unwrap(), None, &LossWeights::default()).unwrap();
    assert!(cost.data()[1].abs() < 1e-12);
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.1f64..0.9, 0.1f64..0.9, 0.01f64..0.6, 0.01f64..0.6).prop_map(|(cx, cy, w, h)| BBox::new(cx, cy, w, h))
}

proptest! {
    #[test]
    fn giou_is_bounded_symmetric_and_below_iou(a in arb_box(), b in arb_box()) {
        let g = giou(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&g));
        prop_assert!((g - giou(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(g <= iou(&a, &b).unwrap() + 1e-12);
        prop_assert!((giou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn matching_is_a_partial_injection(costs in proptest::collection::vec(0.0f64..10.0, 12)) {
        let r = hungarian_match(&Tensor::new(&[3, 4], costs.clone()).unwrap()).unwrap();
        prop_assert!(r.assignment.iter().all(|&j| j < 4));
        let mut cols = r.assignment.clone();
        cols.sort_unstable();
        cols.dedup();
        prop_assert_eq!(cols.len(), 3);
        prop_assert!((r.total_cost - brute_force_min(&costs, 3, 4)).abs() < 1e-9);
    }
}
