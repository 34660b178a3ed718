//! Differentiable box losses and the full per-sample objective.

use super::matching::{hungarian_match, match_cost, MatchResult};
use super::LossWeights;
use crate::decoder::DecoderOutput;
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

/// Supervision for one clip, over the sampled frames.
#[derive(Clone, Debug, PartialEq)]
pub struct LossTargets {
    /// Ground-truth tubes `[M, T, 4]`.
    pub boxes: Tensor,
    /// Action labels per actor; `None` under weak supervision.
    pub actions: Option<Vec<Vec<usize>>>,
    pub group: usize,
}

/// Weighted contributions; `total = l1 + giou + group_ce + action_bce`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub l1: f64,
    pub giou: f64,
    pub group_ce: f64,
    pub action_bce: f64,
    /// One matching per supervised box layer, last one final.
    pub matches: Vec<MatchResult>,
}

fn corners<'t>(b: Var<'t>) -> Result<[Var<'t>; 4]> {
    let col = |i| b.narrow(1, i, 1);
    let (cx, cy) = (col(0)?, col(1)?);
    let (hw, hh) = (col(2)?.mul_scalar(0.5), col(3)?.mul_scalar(0.5));
    Ok([cx.sub(hw)?, cy.sub(hh)?, cx.add(hw)?, cy.add(hh)?])
}

fn check_pairs(pred: &Var<'_>, gt: &Var<'_>) -> Result<usize> {
    let (ps, gs) = (pred.shape(), gt.shape());
    if ps.len() != 2 || ps[1] != 4 || ps != gs {
        return Err(Error::dim(format!("box pairs must both be [P, 4], got {ps:?} and {gs:?}")));
    }
    for v in [pred.value(), gt.value()] {
        if v.data().chunks_exact(4).any(|b| !(b[2] > 0.0 && b[3] > 0.0)) {
            return Err(Error::contract("degenerate box in loss input"));
        }
    }
    Ok(ps[0])
}

/// gIoU of each row pair, `[P]`.
pub fn pairwise_giou<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>> {
    let p = check_pairs(&pred, &gt)?;
    let (a, b) = (corners(pred)?, corners(gt)?);
    let iw = a[2].minimum(b[2])?.sub(a[0].maximum(b[0])?)?.relu();
    let ih = a[3].minimum(b[3])?.sub(a[1].maximum(b[1])?)?.relu();
    let inter = iw.mul(ih)?;
    let area = |x: Var<'t>| -> Result<Var<'t>> { x.narrow(1, 2, 1)?.mul(x.narrow(1, 3, 1)?) };
    let union = area(pred)?.add(area(gt)?)?.sub(inter)?;
    let hull_w = a[2].maximum(b[2])?.sub(a[0].minimum(b[0])?)?;
    let hull_h = a[3].maximum(b[3])?.sub(a[1].minimum(b[1])?)?;
    let hull = hull_w.mul(hull_h)?;
    let g = inter.div(union)?.sub(hull.sub(union)?.div(hull)?)?;
    g.reshape(&[p])
}

/// Mean of `1 − gIoU` over matched pairs.
pub fn giou_loss<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>> {
    Ok(pairwise_giou(pred, gt)?.neg().add_scalar(1.0).mean())
}

/// Mean absolute coordinate difference over pairs and coordinates.
pub fn l1_loss<'t>(pred: Var<'t>, gt: Var<'t>) -> Result<Var<'t>> {
    check_pairs(&pred, &gt)?;
    Ok(pred.sub(gt)?.abs().mean())
}

fn keyframe_slice(tube: &Tensor, slot: usize) -> Tensor {
    let (n, t) = (tube.shape()[0], tube.shape()[1]);
    let mut data = Vec::with_capacity(n * 4);
    for i in 0..n {
        let start = (i * t + slot) * 4;
        data.extend_from_slice(&tube.data()[start..start + 4]);
    }
    Tensor::from_parts(vec![n, 4], data)
}

/// Box terms for every supervised decoder layer plus group cross-entropy and
/// per-query action BCE (unmatched queries target all zeros).
///
/// Each layer is matched independently on its keyframe boxes; matched tubes
/// are compared over all frames. Without decoder layers the reference tube
/// stands in for the last layer.
pub fn total_objective<'t>(
    out: &DecoderOutput<'t>,
    targets: &LossTargets,
    weights: &LossWeights,
    keyframe: usize,
) -> Result<(Var<'t>, LossReport)> {
    let tape = out.group_logits.tape();
    let gs = targets.boxes.shape();
    if gs.len() != 3 || gs[2] != 4 {
        return Err(Error::data(format!("target boxes must be [M, T, 4], got {gs:?}")));
    }
    let (m, frames) = (gs[0], gs[1]);
    let pred_shape = out.reference_boxes.shape();
    if pred_shape[1] != frames || keyframe >= frames {
        return Err(Error::dim(format!(
            "target tubes span {frames} frames, predictions {pred_shape:?}, keyframe {keyframe}"
        )));
    }
    let (n, num_actions) = (pred_shape[0], out.action_logits.shape()[1]);
    if let Some(acts) = &targets.actions {
        if acts.len() != m {
            return Err(Error::data(format!("{} action sets for {m} actors", acts.len())));
        }
    }
    let groups = out.group_logits.shape()[0];
    if targets.group >= groups {
        return Err(Error::data(format!("group label {} outside {groups} classes", targets.group)));
    }

    let layers: Vec<Var<'t>> = match (out.per_layer_boxes.as_slice(), weights.aux_layers) {
        ([], _) => vec![out.reference_boxes],
        (all, true) => all.to_vec(),
        (all, false) => vec![*all.last().unwrap()],
    };
    let logits = out.action_logits.value();
    let gt_kf = keyframe_slice(&targets.boxes, keyframe);
    let gt_flat = tape.constant(targets.boxes.reshape(&[m * frames, 4])?);

    let mut report = LossReport::default();
    let mut terms: Vec<Var<'t>> = Vec::new();
    for tube in layers {
        let pred_kf = keyframe_slice(&tube.value(), keyframe);
        let cost = match_cost(&pred_kf, &logits, &gt_kf, targets.actions.as_deref(), weights)?;
        let matching = hungarian_match(&cost)?;
        let matched = tube.index_select(&matching.assignment)?.reshape(&[m * frames, 4])?;
        if weights.l1 > 0.0 {
            let term = l1_loss(matched, gt_flat)?.mul_scalar(weights.l1);
            report.l1 += term.item();
            terms.push(term);
        }
        if weights.giou > 0.0 {
            let term = giou_loss(matched, gt_flat)?.mul_scalar(weights.giou);
            report.giou += term.item();
            terms.push(term);
        }
        report.matches.push(matching);
    }

    if weights.group_ce > 0.0 {
        let nll = out.group_logits.log_softmax(0)?.narrow(0, targets.group, 1)?.neg().sum();
        let term = nll.mul_scalar(weights.group_ce);
        report.group_ce = term.item();
        terms.push(term);
    }

    if let (Some(acts), true) = (&targets.actions, weights.action_bce > 0.0) {
        let last = report.matches.last().expect("at least one box layer");
        let mut y = vec![0.0; n * num_actions];
        for (gt, &pred) in last.assignment.iter().enumerate() {
            for &a in &acts[gt] {
                if a >= num_actions {
                    return Err(Error::data(format!("action index {a} outside {num_actions} classes")));
                }
                y[pred * num_actions + a] = 1.0;
            }
        }
        let y = tape.constant(Tensor::new(&[n, num_actions], y)?);
        let z = out.action_logits;
        let bce = z.softplus().sub(z.mul(y)?)?.mean();
        let term = bce.mul_scalar(weights.action_bce);
        report.action_bce = term.item();
        terms.push(term);
    }

    let total = terms.into_iter().reduce(|a, b| a.add(b).expect("scalar terms")).unwrap_or_else(|| tape.constant(Tensor::scalar(0.0)));
    report.total = total.item();
    Ok((total, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn boxes<'t>(tape: &'t Tape, rows: &[[f64; 4]]) -> Var<'t> {
        let data = rows.iter().flatten().copied().collect();
        tape.leaf(Tensor::new(&[rows.len(), 4], data).unwrap())
    }

    #[test]
    fn l1_hand_value_and_symmetry() {
        let tape = Tape::new();
        let a = boxes(&tape, &[[0.5, 0.5, 0.2, 0.2]]);
        let b = boxes(&tape, &[[0.6, 0.5, 0.2, 0.4]]);
        assert!((l1_loss(a, b).unwrap().item() - 0.075).abs() < 1e-12);
        assert_eq!(l1_loss(a, b).unwrap().item(), l1_loss(b, a).unwrap().item());
        assert_eq!(l1_loss(a, a).unwrap().item(), 0.0);
    }

    #[test]
    fn giou_loss_hand_value() {
        let tape = Tape::new();
        let a = boxes(&tape, &[[0.5, 0.5, 1.0, 1.0]]);
        let b = boxes(&tape, &[[2.5, 2.5, 1.0, 1.0]]);
        assert!((giou_loss(a, b).unwrap().item() - 16.0 / 9.0).abs() < 1e-12);
        assert!(giou_loss(a, a).unwrap().item().abs() < 1e-15);
    }
}
