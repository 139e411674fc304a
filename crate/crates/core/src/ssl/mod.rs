//! Masked contrastive pretraining: distractor sampling, contrastive and
//! diversity losses, the training step and per-language validation.

mod loss;
mod train;
mod valid;

pub use loss::{
    code_perplexity, contrastive_loss_sum, diversity_loss, diversity_loss_var, sample_distractors, total_loss,
    COSINE_EPS,
};
pub use train::{crop, pretrain, pretrain_step, ssl_forward, PretrainConfig, SslTerms, TrainLog};
pub use valid::{per_language_valid_loss, read_valid_csv, write_valid_csv, LanguageLoss, ValidReport};

use serde::{Deserialize, Serialize};

/// Which diversity penalty to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiversityForm {
    /// Scaled negative entropy of the average codebook usage.
    #[default]
    Paper,
    /// Normalized shortfall of the code perplexity from `G·V`.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    /// Distractors per masked frame (`K`).
    pub num_distractors: usize,
    /// Contrastive temperature.
    pub kappa: f64,
    /// Weight of the diversity penalty.
    pub alpha: f64,
    pub diversity_form: DiversityForm,
    /// Maximum samples per training utterance.
    pub crop_limit: usize,
}

impl SslConfig {
    pub fn paper() -> Self {
        Self { num_distractors: 100, kappa: 0.1, alpha: 0.1, diversity_form: DiversityForm::Paper, crop_limit: 250_000 }
    }

    /// Fewer distractors and 1 s crops, keeping attention memory small.
    pub fn desk() -> Self {
        Self { num_distractors: 10, crop_limit: 16_000, ..Self::paper() }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.kappa > 0.0) {
            errs.push(format!("kappa must be positive, got {}", self.kappa));
        }
        if !(self.alpha >= 0.0) {
            errs.push(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if self.crop_limit == 0 {
            errs.push("crop_limit must be positive".into());
        }
        errs
    }
}

impl Default for SslConfig {
    fn default() -> Self {
        Self::desk()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_m: f64,
    pub l_d: f64,
    pub l: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub num_masked: usize,
    /// Summed per-group perplexity of the average soft codebook usage.
    pub code_ppl: f64,
    pub lr: f64,
    pub tau: f64,
}
