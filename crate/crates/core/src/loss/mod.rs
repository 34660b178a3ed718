//! Box regression, matching and the training objective.

mod boxes;
mod matching;
mod objective;

use serde::{Deserialize, Serialize};

pub use boxes::{giou, iou, BBox};
pub use matching::{hungarian_match, match_cost, MatchResult};
pub use objective::{giou_loss, l1_loss, pairwise_giou, total_objective, LossReport, LossTargets};

use crate::error::{Error, Result};

/// Weights of the four objective terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub giou: f64,
    pub group_ce: f64,
    pub action_bce: f64,
    /// Add the box terms for every decoder layer, not only the last.
    pub aux_layers: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { l1: 5.0, giou: 2.0, group_ce: 1.0, action_bce: 1.0, aux_layers: true }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("l1", self.l1), ("giou", self.giou), ("group_ce", self.group_ce), ("action_bce", self.action_bce)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::config(format!("loss weight {name} = {w} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }
}
