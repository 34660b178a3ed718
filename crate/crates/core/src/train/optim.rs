//! Adam with decoupled weight decay, and SGD with momentum.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::OptimizerKind;
use crate::error::{Error, Result};
use crate::nn::{GradMap, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
}

impl Default for OptimizerHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, momentum: 0.9 }
    }
}

/// Per-parameter moment buffers and the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub hyper: OptimizerHyper,
    pub step: u64,
    /// Adam first moments, or SGD velocities.
    pub first: BTreeMap<String, Tensor>,
    /// Adam second moments; empty for SGD.
    pub second: BTreeMap<String, Tensor>,
}

/// Weight decay applies to matrices and higher-rank tensors only; biases,
/// norm gains and tokens are left alone.
fn decays(t: &Tensor) -> bool {
    t.ndim() >= 2
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, hyper: OptimizerHyper) -> Self {
        Self { kind, hyper, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    /// One update of every unfrozen parameter that has a gradient.
    ///
    /// A non-finite gradient aborts the whole step before anything changes.
    pub fn step(&mut self, store: &mut ParamStore, grads: &GradMap, lr: f64, weight_decay: f64) -> Result<()> {
        if lr < 0.0 {
            return Err(Error::config(format!("negative learning rate {lr}")));
        }
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {name}; step skipped")));
            }
            let p = store.get(name).ok_or_else(|| Error::config(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::dim(format!("{name}: gradient {:?} vs parameter {:?}", g.shape(), p.shape())));
            }
        }
        self.step += 1;
        let h = self.hyper;
        for (name, g) in grads {
            if store.is_frozen(name) {
                continue;
            }
            let p = store.value_mut(name).expect("checked above");
            let wd = if decays(p) { weight_decay } else { 0.0 };
            match self.kind {
                OptimizerKind::Adam => {
                    let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
                    let bc1 = 1.0 - h.beta1.powi(self.step as i32);
                    let bc2 = 1.0 - h.beta2.powi(self.step as i32);
                    let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for (i, &gi) in g.data().iter().enumerate() {
                        md[i] = h.beta1 * md[i] + (1.0 - h.beta1) * gi;
                        vd[i] = h.beta2 * vd[i] + (1.0 - h.beta2) * gi * gi;
                        let update = (md[i] / bc1) / ((vd[i] / bc2).sqrt() + h.eps);
                        pd[i] -= lr * (update + wd * pd[i]);
                    }
                }
                OptimizerKind::SgdMomentum => {
                    let vel = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
                    let (pd, vd) = (p.data_mut(), vel.data_mut());
                    for (i, &gi) in g.data().iter().enumerate() {
                        vd[i] = h.momentum * vd[i] + gi + wd * pd[i];
                        pd[i] -= lr * vd[i];
                    }
                }
            }
        }
        Ok(())
    }
}

/// Global L2 norm of a gradient set.
pub fn grad_norm(grads: &GradMap) -> f64 {
    grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping. `max_norm = 0` disables clipping.
pub fn clip_grad_norm(grads: &mut GradMap, max_norm: f64) -> f64 {
    let norm = grad_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.scale(s);
        }
    }
    norm
}
