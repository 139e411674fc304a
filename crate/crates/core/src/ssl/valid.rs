use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use super::train::ssl_forward;
use super::{code_perplexity, diversity_loss, SslConfig};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{mask_timesteps, MaskSpec, SpeechModel};
use crate::rng::{hash_str, CounterRng};
use crate::scalar::Scalar;
use crate::tensor::Tape;

/// Validation losses for one language (or the pooled set).
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LanguageLoss {
    pub language: String,
    pub utterances: usize,
    /// Masked frames; the weight of this row in pooled averages.
    pub frames: usize,
    pub l_m: f64,
    pub l_d: f64,
    pub l: f64,
    pub code_ppl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidReport {
    pub rows: Vec<LanguageLoss>,
    pub pooled: LanguageLoss,
}

struct UttStats {
    language: String,
    masked: usize,
    lm_sum: f64,
    ld: f64,
    ppl: f64,
}

fn utterance_stats<S: Scalar>(model: &SpeechModel<S>, u: &Utterance<S>, ssl: &SslConfig, tau: f64) -> Result<UttStats> {
    let cfg = &model.config;
    let wave = &u.samples[..u.samples.len().min(ssl.crop_limit)];
    let t = cfg
        .latent_len(wave.len())
        .ok_or(Error::TooShort { op: "valid_loss", needed: cfg.min_samples(), got: wave.len() })?;
    let root = CounterRng::new(hash_str(&u.id));
    let mask: MaskSpec = mask_timesteps(t, cfg.mask_prob, cfg.mask_span_len, &mut root.fork(1));
    let mut tape = Tape::new();
    tape.set_check_finite(false);
    let bound = tape.bind(&model.params, |_| false);
    let terms = ssl_forward(
        &mut tape,
        &bound,
        cfg,
        ssl,
        wave,
        &mask,
        &mut root.fork(2),
        tau,
        None,
        true,
        false,
        &mut root.fork(3),
    )?;
    let (ld, ppl) = match terms.pbar_sum {
        Some(p) => {
            let pbar = tape.value(p).map(|v| v / S::from_usize_lossy(terms.num_masked));
            (diversity_loss(&pbar, ssl.diversity_form)?, code_perplexity(&pbar))
        }
        None => (0.0, 0.0),
    };
    Ok(UttStats {
        language: u.language.clone(),
        masked: terms.num_masked,
        lm_sum: tape.value(terms.lm_sum).item().as_f64(),
        ld,
        ppl,
    })
}

fn aggregate(language: &str, stats: &[&UttStats], alpha: f64) -> Option<LanguageLoss> {
    let frames: usize = stats.iter().map(|s| s.masked).sum();
    if frames == 0 {
        return None;
    }
    let w = frames as f64;
    let l_m = stats.iter().map(|s| s.lm_sum).sum::<f64>() / w;
    let l_d = stats.iter().map(|s| s.ld * s.masked as f64).sum::<f64>() / w;
    let code_ppl = stats.iter().map(|s| s.ppl * s.masked as f64).sum::<f64>() / w;
    Some(LanguageLoss {
        language: language.to_string(),
        utterances: stats.len(),
        frames,
        l_m,
        l_d,
        l: l_m + alpha * l_d,
        code_ppl,
    })
}

/// Per-language pretraining losses on a validation set.
///
/// Masks and distractors are seeded by utterance id and no Gumbel noise is
/// used, so the result depends only on the parameters. Each row averages
/// per-utterance losses weighted by masked frames, hence the weighted mean of
/// the rows equals the pooled row. Languages without masked frames are
/// omitted with a warning.
pub fn per_language_valid_loss<S: Scalar>(
    model: &SpeechModel<S>,
    items: &[Utterance<S>],
    ssl: &SslConfig,
    tau: f64,
) -> Result<ValidReport> {
    let stats: Vec<UttStats> = items
        .par_iter()
        .map(|u| utterance_stats(model, u, ssl, tau))
        .collect::<Result<Vec<_>>>()?;
    let mut by_lang: BTreeMap<&str, Vec<&UttStats>> = BTreeMap::new();
    for s in &stats {
        by_lang.entry(s.language.as_str()).or_default().push(s);
    }
    let mut rows = Vec::new();
    for (lang, group) in &by_lang {
        match aggregate(lang, group, ssl.alpha) {
            Some(r) => rows.push(r),
            None => log::warn!("language `{lang}` has no masked validation frames; omitted"),
        }
    }
    let all: Vec<&UttStats> = stats.iter().collect();
    let pooled = aggregate("all", &all, ssl.alpha)
        .ok_or_else(|| Error::Data("validation set produced no masked frames".into()))?;
    Ok(ValidReport { rows, pooled })
}

/// Writes `language,utterances,frames,l_m,l_d,loss,ppl_codebook` rows, one
/// per language followed by the pooled row.
pub fn write_valid_csv(path: &Path, report: &ValidReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| Error::Data(e.to_string());
    w.write_record(["language", "utterances", "frames", "l_m", "l_d", "loss", "ppl_codebook"]).map_err(err)?;
    for r in report.rows.iter().chain(std::iter::once(&report.pooled)) {
        w.write_record([
            r.language.clone(),
            r.utterances.to_string(),
            r.frames.to_string(),
            r.l_m.to_string(),
            r.l_d.to_string(),
            r.l.to_string(),
            r.code_ppl.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Reads a table written by [`write_valid_csv`]; the last row is the
/// pooled one.
pub fn read_valid_csv(path: &Path) -> Result<ValidReport> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let field = |i: usize| rec.get(i).ok_or_else(|| Error::Data(format!("{}: short row", path.display())));
        let num = |i: usize| -> Result<f64> {
            field(i)?.parse().map_err(|_| Error::Data(format!("{}: bad number in column {i}", path.display())))
        };
        rows.push(LanguageLoss {
            language: field(0)?.to_string(),
            utterances: num(1)? as usize,
            frames: num(2)? as usize,
            l_m: num(3)?,
            l_d: num(4)?,
            l: num(5)?,
            code_ppl: num(6)?,
        });
    }
    let pooled = rows.pop().ok_or_else(|| Error::Data(format!("{}: no rows", path.display())))?;
    Ok(ValidReport { rows, pooled })
}
