use alloc::format;
use alloc::vec::Vec;

use crate::error::Result;
use crate::param::{state_err, ParamStore};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { lr: 0.1, momentum: 0.9, nesterov: true, weight_decay: 0.0004 }
    }
}

/// One SGD step over every trainable parameter, then clears gradients.
///
/// `g ← grad + wd·w; v ← μ·v + g; w ← w − lr·(g + μ·v)` with Nesterov,
/// `w ← w − lr·v` without.
pub fn sgd_step<F: Real>(store: &mut ParamStore<F>, cfg: &SgdConfig) -> Result<()> {
    if let Some(p) = store.params().iter().find(|p| p.trainable && p.grad.is_none()) {
        return Err(state_err(format!("parameter {} has no gradient", p.name)));
    }
    let (lr, mu, wd) = (F::of(cfg.lr), F::of(cfg.momentum), F::of(cfg.weight_decay));
    for p in store.params_mut().iter_mut().filter(|p| p.trainable) {
        let grad = p.grad.take().expect("checked above");
        let w = p.value.data_mut();
        for i in 0..w.len() {
            let g = grad[i] + wd * w[i];
            let v = mu * p.momentum[i] + g;
            p.momentum[i] = v;
            let step = if cfg.nesterov { g + mu * v } else { v };
            w[i] -= lr * step;
        }
    }
    Ok(())
}

/// Nesterov form of [`sgd_step`] with explicit hyperparameters.
pub fn sgd_nesterov_step<F: Real>(store: &mut ParamStore<F>, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    sgd_step(store, &SgdConfig { lr, momentum, nesterov: true, weight_decay })
}

/// Step decay: `base · factor^(number of milestones ≤ epoch)`, epochs counted from 0.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(deny_unknown_fields))]
pub struct MultiStepLr {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub factor: f64,
}

impl MultiStepLr {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let k = self.milestones.iter().filter(|&&m| m <= epoch).count();
        let mut lr = self.base;
        for _ in 0..k {
            lr *= self.factor;
        }
        lr
    }
}
