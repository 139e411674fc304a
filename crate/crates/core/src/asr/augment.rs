use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::mask_timesteps;
use crate::rng::CounterRng;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Tensor, Var};

/// Span masking of encoder features during finetuning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub time_mask_prob: f64,
    pub time_span: usize,
    pub channel_mask_prob: f64,
    pub channel_span: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { time_mask_prob: 0.05, time_span: 10, channel_mask_prob: 0.1, channel_span: 8 }
    }
}

impl AugmentConfig {
    pub fn off() -> Self {
        Self { time_mask_prob: 0.0, channel_mask_prob: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        for (name, p) in [("time_mask_prob", self.time_mask_prob), ("channel_mask_prob", self.channel_mask_prob)] {
            if !(0.0..=1.0).contains(&p) {
                errs.push(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        if self.time_span == 0 || self.channel_span == 0 {
            errs.push("mask spans must be at least 1".into());
        }
        errs
    }
}

/// Zeroes sampled time spans and channel bands of `z [T, d]`. Spans start
/// at each position with the configured probability, as in pretraining
/// masking. Identity outside training.
pub fn feature_mask_augment<S: Scalar>(
    tape: &mut Tape<S>,
    z: Var,
    cfg: &AugmentConfig,
    train: bool,
    rng: &mut CounterRng,
) -> Result<Var> {
    let errs = cfg.validate();
    if !errs.is_empty() {
        return Err(Error::Config(errs));
    }
    if !train || (cfg.time_mask_prob == 0.0 && cfg.channel_mask_prob == 0.0) {
        return Ok(z);
    }
    let s = tape.shape(z).to_vec();
    if s.len() != 2 {
        return Err(Error::shape("feature_mask_augment", &[&s]));
    }
    let time = mask_timesteps(s[0], cfg.time_mask_prob, cfg.time_span, rng);
    let chan = mask_timesteps(s[1], cfg.channel_mask_prob, cfg.channel_span, rng);
    let keep = |m: bool| if m { S::zero() } else { S::one() };
    let tk = tape.constant(Tensor::new([s[0], 1], time.flags().iter().map(|&m| keep(m)).collect())?);
    let ck = tape.constant(Tensor::new([1, s[1]], chan.flags().iter().map(|&m| keep(m)).collect())?);
    let z = tape.mul(z, tk)?;
    tape.mul(z, ck)
}
