use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{code_indices, SpeechModel};
use crate::rng::{hash_str, CounterRng};
use crate::scalar::Scalar;

/// Normalization applied to the raw codebook counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageNorm {
    /// Each group's block is a frequency histogram.
    #[default]
    PerGroupL1,
    /// The whole vector has unit Euclidean norm.
    L2,
}

/// Codebook usage of one language, flattened group-major (`g · V + v`).
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageUsage {
    pub language: String,
    pub utterances: usize,
    pub frames: usize,
    pub vector: Vec<f64>,
}

/// Per language, samples `n_utts` utterances (without replacement when
/// enough exist, otherwise with replacement and a warning), counts the
/// hard codebook choices of every frame and normalizes. Sampling depends
/// only on the seed and the utterance ids, not on input order.
pub fn extract_codebook_usage<S: Scalar>(
    model: &SpeechModel<S>,
    utterances: &[Utterance<S>],
    languages: &[String],
    n_utts: usize,
    norm: UsageNorm,
    seed: u64,
) -> Result<Vec<LanguageUsage>> {
    let g = model.config.num_codebooks;
    let v = model.config.entries_per_book;
    let mut by_lang: BTreeMap<&str, Vec<&Utterance<S>>> = BTreeMap::new();
    for u in utterances {
        by_lang.entry(u.language.as_str()).or_default().push(u);
    }
    languages
        .iter()
        .map(|lang| {
            let mut pool = by_lang
                .get(lang.as_str())
                .cloned()
                .ok_or_else(|| Error::Data(format!("no utterances for language `{lang}`")))?;
            pool.sort_by(|a, b| a.id.cmp(&b.id));
            let mut rng = CounterRng::new(seed).fork(hash_str(lang));
            let picked: Vec<&Utterance<S>> = if pool.len() >= n_utts {
                rng.shuffle(&mut pool);
                pool[..n_utts].to_vec()
            } else {
                log::warn!("language `{lang}` has {} utterances, sampling {n_utts} with replacement", pool.len());
                (0..n_utts).map(|_| pool[rng.below(pool.len())]).collect()
            };
            let counts: Vec<Vec<u64>> = picked
                .par_iter()
                .map(|u| {
                    let idx = code_indices(model, &u.samples)?;
                    let mut c = vec![0u64; g * v];
                    for (k, &e) in idx.iter().enumerate() {
                        c[(k % g) * v + e] += 1;
                    }
                    Ok(c)
                })
                .collect::<Result<_>>()?;
            let mut total = vec![0u64; g * v];
            for c in &counts {
                total.iter_mut().zip(c).for_each(|(t, x)| *t += x);
            }
            let frames = (total.iter().sum::<u64>() / g.max(1) as u64) as usize;
            if frames == 0 {
                return Err(Error::Data(format!("language `{lang}` produced no frames")));
            }
            let vector = normalize(&total, g, v, norm);
            Ok(LanguageUsage { language: lang.clone(), utterances: picked.len(), frames, vector })
        })
        .collect()
}

fn normalize(counts: &[u64], g: usize, v: usize, norm: UsageNorm) -> Vec<f64> {
    match norm {
        UsageNorm::PerGroupL1 => counts
            .chunks(v)
            .flat_map(|block| {
                let s = block.iter().sum::<u64>() as f64;
                block.iter().map(move |c| *c as f64 / s)
            })
            .collect(),
        UsageNorm::L2 => {
            let n = counts.iter().map(|c| (*c as f64).powi(2)).sum::<f64>().sqrt();
            let _ = g;
            counts.iter().map(|c| *c as f64 / n).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::tensor::Tensor;

    #[test]
    fn degenerate_model_gives_one_hot_blocks() {
        let cfg = ModelConfig::desk();
        let mut m = SpeechModel::<f64>::init(cfg.clone(), 1).unwrap();
        let w = m.params.get_mut("quantizer.logits.weight").unwrap();
        *w = Tensor::zeros(w.shape());
        let b = m.params.get_mut("quantizer.logits.bias").unwrap();
        let mut bias = vec![0.0; b.numel()];
        for g in 0..cfg.num_codebooks {
            bias[g * cfg.entries_per_book] = 10.0;
        }
        *b = Tensor::new(b.shape().to_vec(), bias).unwrap();
        let mut rng = CounterRng::new(0);
        let utts: Vec<Utterance<f64>> = (0..3)
            .map(|i| Utterance::new(format!("u{i}"), "x", (0..2000).map(|_| rng.normal()).collect()))
            .collect();
        let u = extract_codebook_usage(&m, &utts, &["x".into()], 5, UsageNorm::PerGroupL1, 0).unwrap();
        let v = &u[0].vector;
        assert_eq!(v.len(), cfg.num_codebooks * cfg.entries_per_book);
        for g in 0..cfg.num_codebooks {
            let block = &v[g * cfg.entries_per_book..(g + 1) * cfg.entries_per_book];
            assert_eq!(block[0], 1.0);
            assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(extract_codebook_usage(&m, &utts, &["y".into()], 5, UsageNorm::PerGroupL1, 0).is_err());
    }
}
