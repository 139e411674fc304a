use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{LmState, NGramModel};
use crate::asr::Vocabulary;
use crate::error::{Error, Result};
use crate::scalar::{log_add_exp, Scalar};
use crate::tensor::Tensor;

const DELIM: usize = 1;

/// Best-path decoding: per-frame argmax, repeats collapsed, blanks dropped.
/// Returns the label sequence.
pub fn greedy_labels<S: Scalar>(log_probs: &Tensor<S>) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = usize::MAX;
    for t in 0..log_probs.rows() {
        let row = log_probs.row(t);
        let k = (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b });
        if k != prev && k != 0 {
            out.push(k);
        }
        prev = k;
    }
    out
}

pub fn greedy_decode<S: Scalar>(log_probs: &Tensor<S>, vocab: &Vocabulary) -> String {
    vocab.decode(&greedy_labels(log_probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    /// Weight of the language-model log-probability.
    pub lm_weight: f64,
    /// Bonus added per completed word.
    pub word_bonus: f64,
    pub nbest: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self { beam: 128, lm_weight: 1.2, word_bonus: 0.5, nbest: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Label sequence without blanks.
    pub labels: Vec<usize>,
    pub text: String,
    /// Acoustic log-probability of the prefix (all alignments).
    pub acoustic: f64,
    /// Fused score: acoustic plus weighted language model and word bonuses.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub best: Hypothesis,
    pub nbest: Vec<Hypothesis>,
}

#[derive(Clone)]
struct Fusion {
    score: f64,
    state: LmState,
    word_start: usize,
}

struct Beam {
    pb: f64,
    pnb: f64,
}

fn word_text(vocab: &Vocabulary, labels: &[usize]) -> String {
    labels.iter().map(|&i| vocab.symbols()[i].as_str()).collect()
}

/// CTC prefix beam search with shallow fusion.
///
/// Each completed word (closed by the delimiter, or at the end of the
/// utterance) adds `lm_weight · ln P(word | history) + word_bonus`; the end
/// of the utterance also adds the weighted sentence-end probability. Beams
/// are ranked by fused score with ties broken by lexicographic prefix order.
/// Without a model (or with `lm_weight = 0` and `word_bonus = 0`) the search
/// ranks prefixes by their acoustic probability alone.
pub fn beam_search_decode<S: Scalar>(
    log_probs: &Tensor<S>,
    vocab: &Vocabulary,
    lm: Option<&NGramModel>,
    cfg: &BeamConfig,
) -> Result<DecodeResult> {
    if cfg.beam == 0 {
        return Err(Error::invalid("beam_search", "beam must be at least 1"));
    }
    if !cfg.lm_weight.is_finite() || !cfg.word_bonus.is_finite() {
        return Err(Error::invalid("beam_search", "weights must be finite"));
    }
    let l = log_probs.cols();
    if l != vocab.len() {
        return Err(Error::invalid("beam_search", format!("{l} emission columns for a vocabulary of {}", vocab.len())));
    }
    let use_lm = lm.filter(|_| cfg.lm_weight != 0.0);
    let begin = Fusion { score: 0.0, state: use_lm.map(|m| m.begin()).unwrap_or_default(), word_start: 0 };
    let mut fusion: HashMap<Vec<usize>, Fusion> = HashMap::from([(Vec::new(), begin)]);
    let extend_fusion = |prefix: &[usize], c: usize, fusion: &mut HashMap<Vec<usize>, Fusion>| {
        let mut key = prefix.to_vec();
        key.push(c);
        if fusion.contains_key(&key) {
            return;
        }
        let parent = fusion[prefix].clone();
        let next = if c == DELIM {
            let word = &prefix[parent.word_start..];
            if word.is_empty() {
                Fusion { word_start: key.len(), ..parent }
            } else {
                let (lp, state) = match use_lm {
                    Some(m) => m.advance(&parent.state, &word_text(vocab, word)),
                    None => (0.0, parent.state.clone()),
                };
                Fusion { score: parent.score + cfg.lm_weight * lp + cfg.word_bonus, state, word_start: key.len() }
            }
        } else {
            parent
        };
        fusion.insert(key, next);
    };
    let ninf = f64::NEG_INFINITY;
    let mut beams: Vec<(Vec<usize>, Beam)> = vec![(Vec::new(), Beam { pb: 0.0, pnb: ninf })];
    for t in 0..log_probs.rows() {
        let row: Vec<f64> = log_probs.row(t).iter().map(|v| v.as_f64()).collect();
        let mut next: HashMap<Vec<usize>, Beam> = HashMap::new();
        for (prefix, b) in &beams {
            let total = log_add_exp(b.pb, b.pnb);
            for (c, &p) in row.iter().enumerate() {
                if p == ninf {
                    continue;
                }
                if c == 0 {
                    let e = next.entry(prefix.clone()).or_insert(Beam { pb: ninf, pnb: ninf });
                    e.pb = log_add_exp(e.pb, total + p);
                    continue;
                }
                extend_fusion(prefix, c, &mut fusion);
                let mut ext = prefix.clone();
                ext.push(c);
                let add = if prefix.last() == Some(&c) { b.pb + p } else { total + p };
                let e = next.entry(ext).or_insert(Beam { pb: ninf, pnb: ninf });
                e.pnb = log_add_exp(e.pnb, add);
                if prefix.last() == Some(&c) {
                    let e = next.entry(prefix.clone()).or_insert(Beam { pb: ninf, pnb: ninf });
                    e.pnb = log_add_exp(e.pnb, b.pnb + p);
                }
            }
        }
        let mut ranked: Vec<(Vec<usize>, Beam)> = next.into_iter().collect();
        let key = |p: &Vec<usize>, b: &Beam| log_add_exp(b.pb, b.pnb) + fusion[p].score;
        ranked.sort_by(|a, b| rank(key(&b.0, &b.1), key(&a.0, &a.1)).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(cfg.beam);
        beams = ranked;
    }
    let mut finals: Vec<Hypothesis> = beams
        .into_iter()
        .map(|(labels, b)| {
            let acoustic = log_add_exp(b.pb, b.pnb);
            let f = &fusion[&labels];
            let mut score = acoustic + f.score;
            let tail = &labels[f.word_start.min(labels.len())..];
            let mut state = f.state.clone();
            if !tail.is_empty() {
                let lp = match use_lm {
                    Some(m) => {
                        let (lp, st) = m.advance(&state, &word_text(vocab, tail));
                        state = st;
                        lp
                    }
                    None => 0.0,
                };
                score += cfg.lm_weight * lp + cfg.word_bonus;
            }
            if let Some(m) = use_lm {
                score += cfg.lm_weight * m.finish(&state);
            }
            Hypothesis { text: vocab.decode(&labels), labels, acoustic, score }
        })
        .collect();
    finals.sort_by(|a, b| rank(b.score, a.score).then_with(|| a.labels.cmp(&b.labels)));
    finals.truncate(cfg.nbest.max(1));
    let best = finals.first().cloned().ok_or_else(|| Error::Numeric("beam search produced no hypotheses".into()))?;
    Ok(DecodeResult { best, nbest: finals })
}

fn rank(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decode::NGramConfig;

    fn vocab() -> Vocabulary {
        Vocabulary::from_texts(["abd"])
    }

    fn lp(rows: &[&[f64]]) -> Tensor<f64> {
        let l = rows[0].len();
        Tensor::new([rows.len(), l], rows.iter().flat_map(|r| r.iter().map(|p| p.ln())).collect()).unwrap()
    }

    #[test]
    fn greedy_collapse() {
        // vocab: blank | a b d
        let e = lp(&[
            &[0.9, 0.0, 0.05, 0.05, 0.0],
            &[0.1, 0.0, 0.8, 0.1, 0.0],
            &[0.1, 0.0, 0.8, 0.1, 0.0],
            &[0.8, 0.0, 0.1, 0.1, 0.0],
            &[0.1, 0.0, 0.1, 0.8, 0.0],
        ]);
        assert_eq!(greedy_decode(&e, &vocab()), "ab");
        let row: &[f64] = &[0.9, 0.025, 0.025, 0.025, 0.025];
        let blank = lp(&[row, row, row]);
        assert_eq!(greedy_decode(&blank, &vocab()), "");
    }

    #[test]
    fn lm_flips_ambiguous_ending() {
        let v = vocab();
        // "ab" and "ad" equally likely acoustically
        let e = lp(&[&[0.02, 0.02, 0.9, 0.03, 0.03], &[0.02, 0.02, 0.02, 0.47, 0.47]]);
        let lm = NGramModel::train(["ab", "ab ab"], &NGramConfig { order: 2, ..Default::default() }).unwrap();
        let no_lm = BeamConfig { lm_weight: 0.0, word_bonus: 0.0, ..Default::default() };
        let r0 = beam_search_decode(&e, &v, None, &no_lm).unwrap();
        assert_eq!(r0.best.text, "ab"); // tie broken lexicographically
        assert!((r0.nbest[0].acoustic - r0.nbest[1].acoustic).abs() < 1e-12);
        // reverse preference by an LM trained on "ad"
        let lm_ad = NGramModel::train(["ad", "ad ad"], &NGramConfig { order: 2, ..Default::default() }).unwrap();
        let with = BeamConfig { lm_weight: 1.0, word_bonus: 0.0, ..Default::default() };
        assert_eq!(beam_search_decode(&e, &v, Some(&lm_ad), &with).unwrap().best.text, "ad");
        assert_eq!(beam_search_decode(&e, &v, Some(&lm), &with).unwrap().best.text, "ab");
    }

    #[test]
    fn beam_one_matches_greedy_on_peaked_rows() {
        let v = vocab();
        let e = lp(&[
            &[0.96, 0.01, 0.01, 0.01, 0.01],
            &[0.01, 0.01, 0.96, 0.01, 0.01],
            &[0.01, 0.96, 0.01, 0.01, 0.01],
            &[0.01, 0.01, 0.01, 0.96, 0.01],
        ]);
        let cfg = BeamConfig { beam: 1, lm_weight: 0.0, word_bonus: 0.0, nbest: 1 };
        assert_eq!(beam_search_decode(&e, &v, None, &cfg).unwrap().best.labels, greedy_labels(&e));
    }

    #[test]
    fn rejects_bad_arguments() {
        let e = lp(&[&[0.5, 0.5]]);
        let cfg = BeamConfig::default();
        assert!(beam_search_decode(&e, &vocab(), None, &cfg).is_err());
        let e = lp(&[&[0.2; 5]]);
        assert!(beam_search_decode(&e, &vocab(), None, &BeamConfig { beam: 0, ..cfg }).is_err());
    }
}
