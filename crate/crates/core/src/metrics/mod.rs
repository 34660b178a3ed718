//! Inference rules and evaluation metrics.

mod records;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use records::{read_predictions, write_predictions, ActorPrediction, PredictionRecord, PREDICTIONS_HEADER};

use crate::error::{Error, Result};
use crate::tensor::kernels::sigmoid;
use crate::tensor::Tensor;

pub const OTHER: &str = "Other";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub labels: Vec<String>,
    /// Sigmoid scores instead of a softmax.
    pub multi_label: bool,
}

/// Ordered label partitions; every partition but the last holds one `Other`
/// sentinel that defers the decision to the next partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelHierarchy {
    partitions: Vec<Partition>,
}

impl LabelHierarchy {
    pub fn new(partitions: Vec<Partition>) -> Result<Self> {
        if partitions.is_empty() {
            return Err(Error::config("a label hierarchy needs at least one partition"));
        }
        let mut seen = BTreeSet::new();
        let last = partitions.len() - 1;
        for (i, p) in partitions.iter().enumerate() {
            if p.labels.is_empty() {
                return Err(Error::config(format!("partition {i} is empty")));
            }
            let others = p.labels.iter().filter(|l| *l == OTHER).count();
            if (i < last && others != 1) || (i == last && others != 0) {
                return Err(Error::config(format!(
                    "partition {i} must hold {} {OTHER:?} label",
                    if i < last { "exactly one" } else { "no" }
                )));
            }
            for l in p.labels.iter().filter(|l| *l != OTHER) {
                if !seen.insert(l.clone()) {
                    return Err(Error::config(format!("label {l:?} appears twice")));
                }
            }
        }
        Ok(Self { partitions })
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partitions
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Walks the partitions in order and stops at the first one whose top label
/// is not `Other`. Returns the label and its probability.
pub fn hierarchical_infer(logits: &[Vec<f64>], hierarchy: &LabelHierarchy) -> Result<(String, f64)> {
    let parts = hierarchy.partitions();
    if logits.len() != parts.len() {
        return Err(Error::config(format!("{} logit vectors for {} partitions", logits.len(), parts.len())));
    }
    for (i, (z, p)) in logits.iter().zip(parts).enumerate() {
        if z.len() != p.labels.len() {
            return Err(Error::config(format!("partition {i}: {} logits for {} labels", z.len(), p.labels.len())));
        }
    }
    for (z, p) in logits.iter().zip(parts) {
        let probs = if p.multi_label { z.iter().map(|&v| sigmoid(v)).collect() } else { softmax(z) };
        let best = argmax(&probs);
        if p.labels[best] != OTHER {
            return Ok((p.labels[best].clone(), probs[best]));
        }
    }
    unreachable!("the final partition has no Other label")
}

/// Group activity of a set of members: their most frequent action label
/// (ties → lowest label index) mapped through `action_to_group`.
pub fn group_activity_vote(members: &[Vec<usize>], action_to_group: &[usize]) -> Result<usize> {
    if members.is_empty() {
        return Err(Error::contract("cannot vote on an empty group"));
    }
    let mut counts = vec![0usize; action_to_group.len()];
    for &a in members.iter().flatten() {
        let slot = counts.get_mut(a).ok_or_else(|| Error::data(format!("action {a} has no group mapping")))?;
        *slot += 1;
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::contract("no member carries an action label"));
    }
    let best = *counts.iter().max().unwrap();
    Ok(action_to_group[counts.iter().position(|&c| c == best).unwrap()])
}

/// Total map from fine class indices to merged class indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeMap {
    map: Vec<usize>,
}

impl MergeMap {
    pub fn new(map: Vec<usize>) -> Self {
        Self { map }
    }

    /// Synthetic groups: per side, actions 0 and 1 share a class (the way
    /// set and pass do in Volleyball); sides stay apart.
    pub fn synthetic(num_actions: usize) -> Self {
        let per_side = num_actions.saturating_sub(1).max(1);
        let map = (0..2 * num_actions)
            .map(|g| {
                let (side, a) = (g / num_actions, g % num_actions);
                side * per_side + a.saturating_sub(1)
            })
            .collect();
        Self { map }
    }

    /// Volleyball: set and pass merge per side.
    /// Order follows [`crate::data::LabelSpace::volleyball`].
    pub fn volleyball() -> Self {
        // r_set r_spike r-pass r_winpoint l_set l-spike l-pass l_winpoint
        Self { map: vec![0, 1, 0, 2, 3, 4, 3, 5] }
    }

    pub fn apply(&self, fine: usize) -> Result<usize> {
        self.map.get(fine).copied().ok_or_else(|| Error::data(format!("class {fine} missing from merge map")))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

fn check_pair_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!("{a} predictions for {b} labels")));
    }
    if a == 0 {
        return Err(Error::contract("metric over an empty set"));
    }
    Ok(())
}

fn merged(xs: &[usize], merge: Option<&MergeMap>) -> Result<Vec<usize>> {
    match merge {
        Some(m) => xs.iter().map(|&x| m.apply(x)).collect(),
        None => Ok(xs.to_vec()),
    }
}

/// Multi-class classification accuracy (fraction of exact matches),
/// optionally after merging classes.
pub fn mca(preds: &[usize], labels: &[usize], merge: Option<&MergeMap>) -> Result<f64> {
    check_pair_lengths(preds.len(), labels.len())?;
    let (p, l) = (merged(preds, merge)?, merged(labels, merge)?);
    Ok(p.iter().zip(&l).filter(|(a, b)| a == b).count() as f64 / p.len() as f64)
}

/// Mean over ground-truth classes of per-class accuracy.
pub fn mpca(preds: &[usize], labels: &[usize], merge: Option<&MergeMap>) -> Result<f64> {
    check_pair_lengths(preds.len(), labels.len())?;
    let (p, l) = (merged(preds, merge)?, merged(labels, merge)?);
    let classes: BTreeSet<usize> = l.iter().copied().collect();
    let total: f64 = classes
        .iter()
        .map(|&c| {
            let idx: Vec<usize> = (0..l.len()).filter(|&i| l[i] == c).collect();
            idx.iter().filter(|&&i| p[i] == c).count() as f64 / idx.len() as f64
        })
        .sum();
    Ok(total / classes.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Samples left out because their ground-truth set was empty.
    pub skipped: usize,
}

/// Per-sample multi-label precision, recall and F1, averaged over samples.
pub fn multilabel_prf(preds: &[Vec<usize>], gts: &[Vec<usize>]) -> Result<Prf> {
    if preds.len() != gts.len() {
        return Err(Error::contract(format!("{} predictions for {} labels", preds.len(), gts.len())));
    }
    let (mut p_sum, mut r_sum, mut f_sum, mut n, mut skipped) = (0.0, 0.0, 0.0, 0usize, 0usize);
    for (pred, gt) in preds.iter().zip(gts) {
        let pred: BTreeSet<usize> = pred.iter().copied().collect();
        let gt: BTreeSet<usize> = gt.iter().copied().collect();
        if gt.is_empty() {
            skipped += 1;
            continue;
        }
        let hit = pred.intersection(&gt).count() as f64;
        let p = if pred.is_empty() { 0.0 } else { hit / pred.len() as f64 };
        let r = hit / gt.len() as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        p_sum += p;
        r_sum += r;
        f_sum += f;
        n += 1;
    }
    if n == 0 {
        return Ok(Prf { precision: 0.0, recall: 0.0, f1: 0.0, skipped });
    }
    let n = n as f64;
    Ok(Prf { precision: p_sum / n, recall: r_sum / n, f1: f_sum / n, skipped })
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// 1-based rank of candidate `gt` for `query` by cosine similarity; ties
/// rank lower candidate indices first.
pub fn retrieval_rank(query: &[f64], candidates: &Tensor, gt: usize) -> usize {
    let sims: Vec<f64> = (0..candidates.shape()[0]).map(|j| cosine(query, candidates.row(j))).collect();
    let s = sims[gt];
    1 + sims.iter().enumerate().filter(|&(j, &v)| v > s || (v == s && j < gt)).count()
}

/// Fraction of queries whose ground-truth candidate ranks within the top `k`.
pub fn recall_at_k(queries: &Tensor, candidates: &Tensor, gt: &[usize], k: usize) -> Result<f64> {
    let (qs, cs) = (queries.shape(), candidates.shape());
    if qs.len() != 2 || cs.len() != 2 || qs[1] != cs[1] {
        return Err(Error::dim(format!("queries {qs:?} and candidates {cs:?} must be [·, d]")));
    }
    if k == 0 || k > cs[0] {
        return Err(Error::config(format!("K = {k} with {} candidates", cs[0])));
    }
    if gt.len() != qs[0] {
        return Err(Error::contract(format!("{} ground-truth indices for {} queries", gt.len(), qs[0])));
    }
    if let Some(&bad) = gt.iter().find(|&&g| g >= cs[0]) {
        return Err(Error::data(format!("ground-truth candidate {bad} out of range")));
    }
    let hits = gt.iter().enumerate().filter(|&(q, &g)| retrieval_rank(queries.row(q), candidates, g) <= k).count();
    Ok(hits as f64 / qs[0] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_level() -> LabelHierarchy {
        LabelHierarchy::new(vec![
            Partition { labels: vec!["group-chat".into(), OTHER.into()], multi_label: false },
            Partition { labels: vec!["walking".into(), "standing".into()], multi_label: false },
        ])
        .unwrap()
    }

    #[test]
    fn hierarchy_short_circuits_and_descends() {
        let h = two_level();
        let (label, _) = hierarchical_infer(&[vec![2.0, 0.0], vec![0.0, 9.0]], &h).unwrap();
        assert_eq!(label, "group-chat");
        let (label, p) = hierarchical_infer(&[vec![0.0, 2.0], vec![3.0, 1.0]], &h).unwrap();
        assert_eq!(label, "walking");
        assert!((p - softmax(&[3.0, 1.0])[0]).abs() < 1e-15);
        assert!(matches!(hierarchical_infer(&[vec![0.0, 1.0]], &h), Err(Error::Config(_))));
    }

    #[test]
    fn single_partition_is_argmax() {
        let h = LabelHierarchy::new(vec![Partition { labels: vec!["a".into(), "b".into(), "c".into()], multi_label: true }]).unwrap();
        assert_eq!(hierarchical_infer(&[vec![0.1, 0.7, -2.0]], &h).unwrap().0, "b");
    }

    #[test]
    fn hierarchy_validation() {
        let bad = LabelHierarchy::new(vec![Partition { labels: vec!["a".into(), OTHER.into()], multi_label: false }]);
        assert!(bad.is_err());
        let dup = LabelHierarchy::new(vec![
            Partition { labels: vec!["a".into(), OTHER.into()], multi_label: false },
            Partition { labels: vec!["a".into()], multi_label: false },
        ]);
        assert!(dup.is_err());
    }

    #[test]
    fn vote_examples() {
        // walk = 0, stand = 1 → groups 10 and 11
        let table = [10, 11];
        assert_eq!(group_activity_vote(&[vec![0], vec![0], vec![1]], &table).unwrap(), 10);
        assert_eq!(group_activity_vote(&[vec![1]], &table).unwrap(), 11);
        assert_eq!(group_activity_vote(&[vec![1], vec![0]], &table).unwrap(), 10);
        assert!(matches!(group_activity_vote(&[], &table), Err(Error::Contract(_))));
    }

    #[test]
    fn mca_examples() {
        assert_eq!(mca(&[0, 0, 1, 2], &[0, 1, 1, 2], None).unwrap(), 0.75);
        let m = MergeMap::new(vec![0, 0, 1]);
        assert_eq!(mca(&[0], &[1], None).unwrap(), 0.0);
        assert_eq!(mca(&[0], &[1], Some(&m)).unwrap(), 1.0);
        assert!(mca(&[], &[], None).is_err());
        assert_eq!(mpca(&[0, 0, 1, 1], &[0, 0, 0, 1], None).unwrap(), (2.0 / 3.0 + 1.0) / 2.0);
    }

    #[test]
    fn prf_examples() {
        let r = multilabel_prf(&[vec![0, 1]], &[vec![1, 2]]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.5, 0.5, 0.5));
        let r = multilabel_prf(&[vec![]], &[vec![0]]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
        let r = multilabel_prf(&[vec![3], vec![1]], &[vec![3], vec![]]).unwrap();
        assert_eq!((r.precision, r.recall, r.f1, r.skipped), (1.0, 1.0, 1.0, 1));
    }

    #[test]
    fn recall_ranks() {
        // Candidates at angles 0°, 10°, ..., 90°; the query points at 0°.
        let cands: Vec<Vec<f64>> =
            (0..10).map(|i| (i as f64 * 10.0).to_radians()).map(|a| vec![a.cos(), a.sin()]).collect();
        let cands = Tensor::from_rows(&cands).unwrap();
        let q = Tensor::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let gt = [0, 3, 6];
        assert_eq!(recall_at_k(&q, &cands, &gt, 1).unwrap(), 1.0 / 3.0);
        assert_eq!(recall_at_k(&q, &cands, &gt, 5).unwrap(), 2.0 / 3.0);
        assert_eq!(recall_at_k(&q, &cands, &gt, 10).unwrap(), 1.0);
        assert!(matches!(recall_at_k(&q, &cands, &gt, 11), Err(Error::Config(_))));
    }
}
