use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SeftError};

use super::params::{ModelParams, ParamId};
use super::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates of one tensor and the number of updates it has received.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MomentSlot {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

/// One bias-corrected adaptive-moment step on a single tensor.
///
/// Nothing is written unless every new value is finite.
pub fn adam_step(
    slot: &mut MomentSlot,
    param: &mut [f64],
    grad: &[f64],
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if param.len() != grad.len() {
        return Err(SeftError::shape("gradient length differs from parameter"));
    }
    if slot.first.is_empty() {
        slot.first = vec![0.0; param.len()];
        slot.second = vec![0.0; param.len()];
    }
    let step = slot.step + 1;
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    let mut staged = Vec::with_capacity(param.len());
    for i in 0..param.len() {
        let m = cfg.beta1 * slot.first[i] + (1.0 - cfg.beta1) * grad[i];
        let v = cfg.beta2 * slot.second[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        let p = param[i] - lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
        if !(p.is_finite() && m.is_finite() && v.is_finite()) {
            return Err(SeftError::NonFinite(format!(
                "optimizer update at entry {i}"
            )));
        }
        staged.push((p, m, v));
    }
    for (i, (p, m, v)) in staged.into_iter().enumerate() {
        param[i] = p;
        slot.first[i] = m;
        slot.second[i] = v;
    }
    slot.step = step;
    Ok(())
}

/// Adaptive-moment optimizer with a fixed learning rate. Only tensors that
/// appear in a gradient set are touched.
#[derive(Debug, Clone, Default)]
pub struct Adam {
    pub config: AdamConfig,
    slots: BTreeMap<ParamId, MomentSlot>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            slots: BTreeMap::new(),
        }
    }

    pub fn slot(&self, id: ParamId) -> Option<&MomentSlot> {
        self.slots.get(&id)
    }

    pub fn apply_update(
        &mut self,
        params: &mut ModelParams,
        grads: &Gradients,
        lr: f64,
    ) -> Result<()> {
        // Validate the whole step first so a bad tensor cannot leave a half-applied update.
        for (id, g) in grads.iter() {
            if g.len() != params.tensor(id).len() {
                return Err(SeftError::shape(format!("gradient for {}", id.name())));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(SeftError::NonFinite(format!("gradient for {}", id.name())));
            }
        }
        let mut staged: Vec<(ParamId, Vec<f64>, MomentSlot)> = Vec::with_capacity(grads.len());
        for (id, g) in grads.iter() {
            let mut slot = self.slots.get(&id).cloned().unwrap_or_default();
            let mut p = params.tensor(id).to_vec();
            adam_step(&mut slot, &mut p, g, lr, &self.config)
                .map_err(|_| SeftError::NonFinite(format!("update for {}", id.name())))?;
            staged.push((id, p, slot));
        }
        for (id, p, slot) in staged {
            params.tensor_mut(id).copy_from_slice(&p);
            self.slots.insert(id, slot);
        }
        Ok(())
    }
}
