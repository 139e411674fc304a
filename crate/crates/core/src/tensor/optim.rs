use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.98, eps: 1e-6, peak_lr: 5e-4, warmup_steps: 32_000, total_steps: 300_000 }
    }
}

/// Learning rate after `step` updates: a linear ramp from 0 to the peak over the
/// warmup, then a linear decay to 0 at `total_steps`. Steps past the end clamp
/// to 0.
pub fn lr_at(step: u64, cfg: &AdamConfig) -> f64 {
    if step > cfg.total_steps {
        log::warn!("lr_at: step {step} past total_steps {}; clamping to 0", cfg.total_steps);
        return 0.0;
    }
    if cfg.warmup_steps > 0 && step <= cfg.warmup_steps {
        return cfg.peak_lr * step as f64 / cfg.warmup_steps as f64;
    }
    let decay_len = cfg.total_steps.saturating_sub(cfg.warmup_steps);
    if decay_len == 0 {
        return 0.0;
    }
    cfg.peak_lr * (cfg.total_steps - step) as f64 / decay_len as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Tensor<S>>,
    pub second: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() }
    }

    pub fn current_lr(&self) -> f64 {
        lr_at(self.step, &self.config)
    }

    /// One bias-corrected Adam update of every parameter selected by
    /// `trainable`, at learning rate `lr_at(step + 1)`. Returns that rate.
    pub fn step(
        &mut self,
        params: &mut ParamStore<S>,
        grads: &Gradients<S>,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<f64> {
        let names: Vec<String> = params.names().filter(|n| trainable(n)).cloned().collect();
        for n in &names {
            match grads.get(n) {
                None => return Err(Error::invalid("adam_step", format!("missing gradient for `{n}`"))),
                Some(g) if g.shape() != params.require(n)?.shape() => {
                    return Err(Error::shape("adam_step", &[g.shape(), params.require(n)?.shape()]))
                }
                _ => {}
            }
        }
        self.step += 1;
        let t = self.step;
        let lr = lr_at(t, &self.config);
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let bc1 = 1.0 - b1.powi(t.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - b2.powi(t.min(i32::MAX as u64) as i32);
        let (b1s, b2s): (S, S) = (lit(b1), lit(b2));
        let (bc1s, bc2s, lrs, eps): (S, S, S, S) = (lit(bc1), lit(bc2), lit(lr), lit(self.config.eps));
        for n in &names {
            let g = &grads[n];
            let p = params.get_mut(n).expect("checked above");
            let m = self.first.entry(n.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let v = self.second.entry(n.clone()).or_insert_with(|| Tensor::zeros(p.shape().to_vec()));
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = b1s * md[i] + (S::one() - b1s) * gi;
                vd[i] = b2s * vd[i] + (S::one() - b2s) * gi * gi;
                let mhat = md[i] / bc1s;
                let vhat = vd[i] / bc2s;
                pd[i] -= lrs * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(lr)
    }
}
