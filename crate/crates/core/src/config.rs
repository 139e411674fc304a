//! Run configuration shared by every command: presets, JSON overrides,
//! unknown-key detection and exhaustive validation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::UsageNorm;
use crate::asr::{AugmentConfig, FinetuneConfig};
use crate::audio::PrepareConfig;
use crate::decode::{BeamConfig, NGramConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::speaker::SvmConfig;
use crate::ssl::{PretrainConfig, SslConfig};
use crate::tensor::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub n_utts: usize,
    pub k: usize,
    pub norm: UsageNorm,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { n_utts: 200, k: 5, norm: UsageNorm::PerGroupL1, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeakerConfig {
    /// Cosine distance above which clusters are not merged.
    pub cut: f64,
    pub svm: SvmConfig,
}

impl Default for SpeakerConfig {
    fn default() -> Self {
        Self { cut: 0.3, svm: SvmConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub pretrain_optim: AdamConfig,
    pub finetune: FinetuneConfig,
    pub finetune_optim: AdamConfig,
    pub prepare: PrepareConfig,
    pub lm: NGramConfig,
    pub beam: BeamConfig,
    pub analysis: AnalysisConfig,
    pub speaker: SpeakerConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Paper,
    Desk,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Self::Paper),
            "desk" => Ok(Self::Desk),
            _ => Err(Error::Config(vec![format!("unknown preset `{s}` (expected paper or desk)")])),
        }
    }
}

impl RunConfig {
    /// Full-scale values: base architecture, 300k updates at peak 5e-4 with
    /// 32k warmup, 250k-sample crops, 5-gram LM and beam 128.
    pub fn paper() -> Self {
        Self {
            model: ModelConfig::paper(),
            pretrain: PretrainConfig { ssl: SslConfig::paper(), batch_size: 8, steps: 300_000, seed: 0 },
            pretrain_optim: AdamConfig::default(),
            finetune: FinetuneConfig { augment: AugmentConfig::default(), batch_size: 8, steps: 20_000, seed: 0, freeze_steps: 10_000 },
            finetune_optim: AdamConfig { peak_lr: 5e-5, warmup_steps: 2_000, total_steps: 20_000, ..AdamConfig::default() },
            prepare: PrepareConfig::default(),
            lm: NGramConfig::default(),
            beam: BeamConfig::default(),
            analysis: AnalysisConfig::default(),
            speaker: SpeakerConfig::default(),
        }
    }

    /// CPU-sized profile for the synthetic corpus.
    pub fn desk() -> Self {
        Self {
            model: ModelConfig::desk(),
            pretrain: PretrainConfig { ssl: SslConfig::desk(), batch_size: 4, steps: 200, seed: 0 },
            pretrain_optim: AdamConfig { peak_lr: 2e-3, warmup_steps: 20, total_steps: 200, ..AdamConfig::default() },
            finetune: FinetuneConfig { augment: AugmentConfig::default(), batch_size: 4, steps: 300, seed: 0, freeze_steps: 50 },
            finetune_optim: AdamConfig { peak_lr: 2e-3, warmup_steps: 30, total_steps: 300, ..AdamConfig::default() },
            prepare: PrepareConfig::default(),
            lm: NGramConfig { order: 3, ..NGramConfig::default() },
            beam: BeamConfig { beam: 16, ..BeamConfig::default() },
            analysis: AnalysisConfig { n_utts: 20, k: 2, ..AnalysisConfig::default() },
            speaker: SpeakerConfig::default(),
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Paper => Self::paper(),
            Preset::Desk => Self::desk(),
        }
    }

    /// Preset values overridden by a partial JSON document. Unknown keys and
    /// every failed constraint are reported together.
    pub fn resolve(preset: Preset, overrides: Option<&str>) -> Result<Self> {
        let mut base = serde_json::to_value(Self::preset(preset))?;
        if let Some(text) = overrides {
            let patch: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("config is not valid JSON: {e}")]))?;
            if !patch.is_object() {
                return Err(Error::Config(vec!["config must be a JSON object".into()]));
            }
            merge(&mut base, patch);
        }
        let mut unknown = Vec::new();
        let cfg: Self = serde_ignored::deserialize(base, |path| unknown.push(format!("unknown key `{path}`")))
            .map_err(|e| Error::Config(unknown.iter().cloned().chain([format!("invalid config: {e}")]).collect()))?;
        let mut errs = unknown;
        errs.extend(cfg.validate());
        if errs.is_empty() { Ok(cfg) } else { Err(Error::Config(errs)) }
    }

    pub fn load(preset: Preset, path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Config(vec![format!("reading {}: {e}", p.display())]))?),
            None => None,
        };
        Self::resolve(preset, text.as_deref())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    /// Every violated constraint, prefixed with its section.
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let mut section = |name: &str, list: Vec<String>| {
            errs.extend(list.into_iter().map(|e| if e.starts_with(name) { e } else { format!("{name}.{e}") }));
        };
        section("model", self.model.validate());
        section("pretrain.ssl", self.pretrain.ssl.validate());
        section("finetune.augment", self.finetune.augment.validate());
        section("prepare", self.prepare.validate());
        section("pretrain_optim", adam_errors(&self.pretrain_optim));
        section("finetune_optim", adam_errors(&self.finetune_optim));
        let mut misc = Vec::new();
        if self.pretrain.batch_size == 0 {
            misc.push("pretrain.batch_size must be >= 1".to_string());
        }
        if self.finetune.batch_size == 0 {
            misc.push("finetune.batch_size must be >= 1".into());
        }
        if self.lm.order == 0 {
            misc.push("lm.order must be >= 1".into());
        }
        if !(self.lm.discount > 0.0 && self.lm.discount < 1.0) {
            misc.push(format!("lm.discount must lie in (0, 1), got {}", self.lm.discount));
        }
        if !(self.lm.unk_count >= 0.0) {
            misc.push("lm.unk_count must be non-negative".into());
        }
        if self.beam.beam == 0 || self.beam.nbest == 0 {
            misc.push("beam.beam and beam.nbest must be >= 1".into());
        }
        if self.analysis.k == 0 || self.analysis.n_utts == 0 {
            misc.push("analysis.k and analysis.n_utts must be >= 1".into());
        }
        if !(0.0..=2.0).contains(&self.speaker.cut) {
            misc.push(format!("speaker.cut must lie in [0, 2], got {}", self.speaker.cut));
        }
        if !(self.speaker.svm.lambda > 0.0) || self.speaker.svm.epochs == 0 {
            misc.push("speaker.svm needs lambda > 0 and epochs >= 1".into());
        }
        errs.extend(misc);
        errs
    }
}

fn adam_errors(c: &AdamConfig) -> Vec<String> {
    let mut errs = Vec::new();
    if !(0.0..1.0).contains(&c.beta1) || !(0.0..1.0).contains(&c.beta2) {
        errs.push("beta1 and beta2 must lie in [0, 1)".into());
    }
    if !(c.eps > 0.0) || !(c.peak_lr > 0.0) {
        errs.push("eps and peak_lr must be positive".into());
    }
    if c.warmup_steps > c.total_steps {
        errs.push(format!("warmup_steps {} exceeds total_steps {}", c.warmup_steps, c.total_steps));
    }
    errs
}

/// Recursively overlays `patch` on `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
