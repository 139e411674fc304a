use super::ModelConfig;
use crate::error::Result;
use crate::rng::CounterRng;
use crate::scalar::Scalar;
use crate::tensor::{Bound, Tape, Tensor, Var};

/// Which latent frames are masked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSpec {
    masked: Vec<bool>,
}

impl MaskSpec {
    pub fn none(len: usize) -> Self {
        Self { masked: vec![false; len] }
    }

    pub fn from_flags(masked: Vec<bool>) -> Self {
        Self { masked }
    }

    pub fn len(&self) -> usize {
        self.masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masked.is_empty()
    }

    pub fn count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    pub fn is_masked(&self, t: usize) -> bool {
        self.masked[t]
    }

    pub fn indices(&self) -> Vec<usize> {
        self.masked.iter().enumerate().filter_map(|(i, &m)| m.then_some(i)).collect()
    }

    pub fn flags(&self) -> &[bool] {
        &self.masked
    }
}

/// Every admissible start index is chosen independently with probability
/// `mask_prob` and expanded to `span` frames; spans may overlap. Sequences
/// shorter than one span get no mask.
pub fn mask_timesteps(len: usize, mask_prob: f64, span: usize, rng: &mut CounterRng) -> MaskSpec {
    let mut masked = vec![false; len];
    let span = span.max(1);
    if len >= span && mask_prob > 0.0 {
        for start in 0..=len - span {
            if rng.uniform() < mask_prob {
                masked[start..start + span].fill(true);
            }
        }
    }
    MaskSpec { masked }
}

/// Replaces masked rows of `latents [T, d]` by the mask embedding.
pub fn apply_mask<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &ModelConfig,
    latents: Var,
    mask: &MaskSpec,
) -> Result<Var> {
    let t = tape.shape(latents)[0];
    let keep: Vec<S> = mask.flags().iter().map(|&m| if m { S::zero() } else { S::one() }).collect();
    let hit: Vec<S> = mask.flags().iter().map(|&m| if m { S::one() } else { S::zero() }).collect();
    let keep = tape.constant(Tensor::new([t, 1], keep)?);
    let hit = tape.constant(Tensor::new([t, 1], hit)?);
    let emb = if cfg.learned_mask_emb {
        bound.get("mask_emb")?
    } else {
        tape.constant(Tensor::zeros([1, cfg.model_dim]))
    };
    let kept = tape.mul(latents, keep)?;
    let filled = tape.mul(hit, emb)?;
    tape.add(kept, filled)
}
