//! Minimum-cost bipartite matching between ground-truth actors and queries.

use serde::{Deserialize, Serialize};

use super::boxes::{giou, BBox};
use super::LossWeights;
use crate::error::{Error, Result};
use crate::tensor::kernels::sigmoid;
use crate::tensor::Tensor;

/// `assignment[i]` is the prediction matched to ground truth `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub assignment: Vec<usize>,
    pub total_cost: f64,
}

/// Exact rectangular assignment (shortest augmenting paths with potentials).
///
/// Rows are ground truths, columns predictions, `M ≤ N`. Among equal-cost
/// alternatives the search prefers lower column indices.
pub fn hungarian_match(cost: &Tensor) -> Result<MatchResult> {
    let s = cost.shape();
    if s.len() != 2 {
        return Err(Error::dim(format!("cost matrix must be 2-D, got {s:?}")));
    }
    let (m, n) = (s[0], s[1]);
    if m > n {
        return Err(Error::contract(format!("{m} ground truths exceed {n} predictions")));
    }
    if !cost.is_finite() {
        return Err(Error::contract("cost matrix has non-finite entries"));
    }
    let c = |i: usize, j: usize| cost.data()[i * n + j];

    // 1-based potentials; column 0 is the virtual source.
    let mut u = vec![0.0; m + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=m {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; m];
    for j in 1..=n {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total_cost = assignment.iter().enumerate().map(|(i, &j)| c(i, j)).sum();
    Ok(MatchResult { assignment, total_cost })
}

/// Pairwise matching cost `[M × N]` on keyframe boxes.
///
/// `cost(i, j) = λ_L1·‖b_i − b̂_j‖₁ + λ_gIoU·(1 − gIoU) + λ_action·(1 − σ̄)`,
/// where `σ̄` averages the sigmoid of prediction `j`'s logits over the ground
/// truth's action labels. Passing `gt_actions = None` (weak supervision)
/// drops the action term.
pub fn match_cost(
    pred_boxes: &Tensor,
    pred_action_logits: &Tensor,
    gt_boxes: &Tensor,
    gt_actions: Option<&[Vec<usize>]>,
    weights: &LossWeights,
) -> Result<Tensor> {
    let (ps, gs) = (pred_boxes.shape(), gt_boxes.shape());
    if ps.len() != 2 || ps[1] != 4 || gs.len() != 2 || gs[1] != 4 {
        return Err(Error::dim(format!("match_cost boxes must be [·, 4], got {ps:?} and {gs:?}")));
    }
    let (n, m) = (ps[0], gs[0]);
    let ls = pred_action_logits.shape();
    if ls.len() != 2 || ls[0] != n {
        return Err(Error::dim(format!("action logits {ls:?} do not cover {n} predictions")));
    }
    let num_actions = ls[1];
    if let Some(acts) = gt_actions {
        if acts.len() != m {
            return Err(Error::dim(format!("{} action sets for {m} ground truths", acts.len())));
        }
        if let Some(bad) = acts.iter().flatten().find(|&&a| a >= num_actions) {
            return Err(Error::data(format!("action index {bad} outside {num_actions} classes")));
        }
    }
    let mut data = Vec::with_capacity(m * n);
    for i in 0..m {
        let g = BBox::from_slice(gt_boxes.row(i));
        for j in 0..n {
            let p = BBox::from_slice(pred_boxes.row(j));
            let l1: f64 = p.to_array().iter().zip(g.to_array()).map(|(a, b)| (a - b).abs()).sum();
            let mut cost = weights.l1 * l1 + weights.giou * (1.0 - giou(&p, &g)?);
            if let Some(acts) = gt_actions {
                if !acts[i].is_empty() {
                    let logits = pred_action_logits.row(j);
                    let conf = acts[i].iter().map(|&a| sigmoid(logits[a])).sum::<f64>() / acts[i].len() as f64;
                    cost += weights.action_bce * (1.0 - conf);
                }
            }
            data.push(cost);
        }
    }
    Tensor::new(&[m, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_by_two() {
        let r = hungarian_match(&Tensor::new(&[2, 2], vec![1.0, 2.0, 2.0, 1.0]).unwrap()).unwrap();
        assert_eq!(r.assignment, vec![0, 1]);
        assert_eq!(r.total_cost, 2.0);
    }

    #[test]
    fn one_by_one() {
        let r = hungarian_match(&Tensor::new(&[1, 1], vec![5.0]).unwrap()).unwrap();
        assert_eq!(r, MatchResult { assignment: vec![0], total_cost: 5.0 });
    }

    #[test]
    fn ties_take_lowest_columns() {
        let r = hungarian_match(&Tensor::full(&[3, 5], 0.25)).unwrap();
        assert_eq!(r.assignment, vec![0, 1, 2]);
    }

    #[test]
    fn rectangular_prefers_cheap_columns() {
        let cost = Tensor::new(&[2, 3], vec![9.0, 1.0, 5.0, 9.0, 2.0, 3.0]).unwrap();
        let r = hungarian_match(&cost).unwrap();
        assert_eq!(r.assignment, vec![1, 2]);
        assert_eq!(r.total_cost, 4.0);
    }

    #[test]
    fn too_many_rows() {
        assert!(matches!(hungarian_match(&Tensor::zeros(&[3, 2])), Err(Error::Contract(_))));
    }

    #[test]
    fn hand_built_costs() {
        let w = LossWeights::default();
        let preds = Tensor::new(&[2, 4], vec![0.5, 0.5, 0.2, 0.2, 0.3, 0.3, 0.2, 0.2]).unwrap();
        let gts = Tensor::new(&[2, 4], vec![0.5, 0.5, 0.2, 0.2, 0.3, 0.3, 0.2, 0.4]).unwrap();
        let logits = Tensor::new(&[2, 2], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let acts = vec![vec![0], vec![1]];
        let cost = match_cost(&preds, &logits, &gts, Some(&acts), &w).unwrap();
        // (0,0): identical boxes, σ(0) = 0.5 → 0.5
        assert!((cost.at(&[0, 0]) - 0.5).abs() < 1e-12);
        // (1,1): L1 0.2; inner box area 0.04 inside 0.08 → gIoU 0.5
        assert!((cost.at(&[1, 1]) - (5.0 * 0.2 + 2.0 * 0.5 + 0.5)).abs() < 1e-12);
        // (0,1): centers 0.2 apart in both axes → disjoint, hull 0.4×0.4
        let g = -(0.16 - 0.08) / 0.16;
        assert!((cost.at(&[0, 1]) - (5.0 * 0.4 + 2.0 * (1.0 - g) + 0.5)).abs() < 1e-12);
        let weak = match_cost(&preds, &logits, &gts, None, &w).unwrap();
        assert!((weak.at(&[0, 0])).abs() < 1e-12);
        assert_eq!(hungarian_match(&cost).unwrap().assignment, vec![0, 1]);
    }
}
