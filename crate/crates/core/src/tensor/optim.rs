//! AdamW with decoupled weight decay and bias correction.

use serde::{Deserialize, Serialize};

use super::params::{ParamId, Params};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.95,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

struct Slot {
    id: ParamId,
    m: Vec<f32>,
    v: Vec<f32>,
}

/// Optimizer over an explicit parameter set. Frozen parameters are simply
/// never registered here, so freezing is structural rather than a masked
/// update.
pub struct AdamW {
    pub cfg: AdamWConfig,
    slots: Vec<Slot>,
    step: u64,
}

impl AdamW {
    pub fn new(cfg: AdamWConfig, ps: &Params, ids: Vec<ParamId>) -> Self {
        let slots = ids
            .into_iter()
            .map(|id| {
                let n = ps.get(id).numel();
                Slot {
                    id,
                    m: vec![0.0; n],
                    v: vec![0.0; n],
                }
            })
            .collect();
        AdamW {
            cfg,
            slots,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn param_count(&self) -> usize {
        self.slots.len()
    }

    /// One update over every registered parameter; gradients are zeroed
    /// afterwards.
    pub fn step(&mut self, ps: &mut Params) -> Result<()> {
        self.step += 1;
        let t = self.step as f64;
        let c = self.cfg;
        let bc1 = 1.0 - (c.beta1 as f64).powf(t);
        let bc2 = 1.0 - (c.beta2 as f64).powf(t);
        for slot in &mut self.slots {
            let tensor = ps.get_mut(slot.id);
            let grad = tensor
                .grad
                .as_mut()
                .ok_or_else(|| Error::contract("optimizer step on parameter without gradient"))?;
            for i in 0..grad.len() {
                let g = grad[i];
                slot.m[i] = c.beta1 * slot.m[i] + (1.0 - c.beta1) * g;
                slot.v[i] = c.beta2 * slot.v[i] + (1.0 - c.beta2) * g * g;
                let mhat = slot.m[i] as f64 / bc1;
                let vhat = slot.v[i] as f64 / bc2;
                let update = mhat / (vhat.sqrt() + c.eps as f64);
                tensor.data[i] -=
                    c.lr * (update as f32 + c.weight_decay * tensor.data[i]);
                grad[i] = 0.0;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f32) -> (Params, ParamId) {
        let mut ps = Params::new();
        let id = ps.register("w", Tensor::full(vec![1], value));
        (ps, id)
    }

    #[test]
    fn zero_grad_zero_decay_is_noop() {
        let (mut ps, id) = one_param(0.7);
        let mut opt = AdamW::new(AdamWConfig::default(), &ps, vec![id]);
        opt.step(&mut ps).unwrap();
        assert_eq!(ps.get(id).data[0], 0.7);
    }

    #[test]
    fn unit_grad_first_step_moves_by_lr() {
        // Bias-corrected moments cancel for a constant gradient at step 1.
        let (mut ps, id) = one_param(0.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &ps, vec![id]);
        ps.get_mut(id).grad.as_mut().unwrap()[0] = 1.0;
        opt.step(&mut ps).unwrap();
        let w = ps.get(id).data[0];
        assert!((w + 0.1).abs() < 1e-6, "w = {w}");
        // gradient was zeroed
        assert_eq!(ps.get(id).grad.as_ref().unwrap()[0], 0.0);
    }

    #[test]
    fn decoupled_decay() {
        let (mut ps, id) = one_param(1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.1,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &ps, vec![id]);
        opt.step(&mut ps).unwrap();
        let w = ps.get(id).data[0];
        assert!((w - 0.99).abs() < 1e-7, "w = {w}");
    }

    #[test]
    fn frozen_param_errors_if_registered() {
        let (mut ps, id) = one_param(1.0);
        ps.set_trainable_by_prefix("w", false);
        let mut opt = AdamW::new(AdamWConfig::default(), &ps, vec![id]);
        assert!(matches!(opt.step(&mut ps), Err(Error::Contract(_))));
    }
}
