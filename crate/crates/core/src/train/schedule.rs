//! Learning-rate and weight-decay schedules.

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub weight_decay_start: f64,
    pub weight_decay_end: f64,
}

impl ScheduleConfig {
    pub fn new(peak_lr: f64, warmup_steps: usize, total_steps: usize, wd: (f64, f64)) -> Result<Self> {
        if warmup_steps >= total_steps {
            return Err(Error::config(format!("warmup {warmup_steps} must be shorter than {total_steps} steps")));
        }
        if wd.0 > wd.1 || peak_lr < 0.0 {
            return Err(Error::config("weight decay bounds out of order or negative learning rate"));
        }
        Ok(Self { peak_lr, warmup_steps, total_steps, weight_decay_start: wd.0, weight_decay_end: wd.1 })
    }

    /// Epoch-based schedule; a positive `max_steps` compresses it to that many
    /// steps, keeping the warm-up fraction.
    pub fn from_train(t: &TrainConfig, steps_per_epoch: usize) -> Result<Self> {
        let (warmup, total) = if t.max_steps > 0 {
            let warmup = (t.max_steps as f64 * t.warmup_epochs as f64 / t.epochs.max(1) as f64).round() as usize;
            (warmup, t.max_steps)
        } else {
            (t.warmup_epochs * steps_per_epoch, t.epochs * steps_per_epoch)
        };
        Self::new(t.peak_lr, warmup, total, (t.weight_decay_start, t.weight_decay_end))
    }
}

/// Linear warm-up from 0 to the peak, then cosine decay to 0 at the last step.
pub fn lr_at(step: usize, cfg: &ScheduleConfig) -> f64 {
    let step = step.min(cfg.total_steps);
    if step < cfg.warmup_steps {
        return cfg.peak_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let progress = (step - cfg.warmup_steps) as f64 / (cfg.total_steps - cfg.warmup_steps) as f64;
    cfg.peak_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Cosine ramp from the start to the end weight decay over all steps.
pub fn wd_at(step: usize, cfg: &ScheduleConfig) -> f64 {
    let a = 0.5 * (1.0 - (std::f64::consts::PI * step.min(cfg.total_steps) as f64 / cfg.total_steps as f64).cos());
    cfg.weight_decay_start * (1.0 - a) + cfg.weight_decay_end * a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScheduleConfig {
        ScheduleConfig::new(5e-4, 50, 300, (0.04, 0.1)).unwrap()
    }

    #[test]
    fn lr_shape() {
        let c = cfg();
        assert_eq!(lr_at(0, &c), 0.0);
        assert_eq!(lr_at(50, &c), 5e-4);
        assert!((lr_at(175, &c) - 2.5e-4).abs() < 1e-9);
        assert!(lr_at(300, &c).abs() < 1e-18);
        assert!((lr_at(25, &c) - 2.5e-4).abs() < 1e-18);
    }

    #[test]
    fn wd_endpoints_and_monotone() {
        let c = cfg();
        assert_eq!(wd_at(0, &c), 0.04);
        assert_eq!(wd_at(300, &c), 0.1);
        let ws: Vec<f64> = (0..=300).map(|s| wd_at(s, &c)).collect();
        assert!(ws.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn rejects_bad_bounds() {
        assert!(ScheduleConfig::new(1e-3, 10, 10, (0.0, 0.0)).is_err());
        assert!(ScheduleConfig::new(1e-3, 1, 10, (0.2, 0.1)).is_err());
    }
}
