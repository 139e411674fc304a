use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SENTENCE_START: &str = "<s>";
pub const SENTENCE_END: &str = "</s>";
pub const UNKNOWN: &str = "<unk>";

/// Stored log10 value for the never-predicted start symbol.
const NEVER: f64 = -99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub order: usize,
    /// Absolute discount subtracted from every observed count.
    pub discount: f64,
    /// Pads sentences with `<s>` and predicts `</s>`.
    pub sentence_markers: bool,
    /// Pseudo-count reserved for unseen words in the unigram distribution.
    pub unk_count: f64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        Self { order: 5, discount: 0.75, sentence_markers: true, unk_count: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    log10_prob: f64,
    log10_backoff: f64,
}

/// Interpolated absolute-discounting backoff n-gram model.
///
/// For a context `h` seen `c(h)` times,
/// `P(w|h) = max(c(hw) − d, 0)/c(h) + λ(h)·P(w|h')` with
/// `λ(h) = d·N₁₊(h·)/c(h)` and `h'` the context without its oldest word;
/// unseen contexts back off entirely. The unigram level is
/// `c(w)/(N + u)` with mass `u/(N + u)` on `<unk>`. The model is stored as
/// an ARPA-style table of interpolated probabilities and backoff weights,
/// which reproduces these probabilities exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramModel {
    order: usize,
    sentence_markers: bool,
    words: Vec<String>,
    ids: HashMap<String, u32>,
    table: HashMap<Vec<u32>, Entry>,
}

/// Words of the current context, oldest first, at most `order − 1` long.
pub type LmState = Vec<u32>;

impl NGramModel {
    pub fn train<'a>(lines: impl IntoIterator<Item = &'a str>, cfg: &NGramConfig) -> Result<Self> {
        if cfg.order == 0 {
            return Err(Error::invalid("train_ngram", "order must be at least 1"));
        }
        if !(cfg.discount > 0.0 && cfg.discount <= 1.0) {
            return Err(Error::invalid("train_ngram", format!("discount must lie in (0, 1], got {}", cfg.discount)));
        }
        if !(cfg.unk_count >= 0.0) {
            return Err(Error::invalid("train_ngram", "unk_count must be non-negative"));
        }
        let mut words: Vec<String> = vec![UNKNOWN.into()];
        let mut ids: HashMap<String, u32> = HashMap::from([(UNKNOWN.to_string(), 0)]);
        let mut intern = |w: &str, words: &mut Vec<String>| -> u32 {
            *ids.entry(w.to_string()).or_insert_with(|| {
                words.push(w.to_string());
                (words.len() - 1) as u32
            })
        };
        let (start, end) = if cfg.sentence_markers {
            (Some(intern(SENTENCE_START, &mut words)), Some(intern(SENTENCE_END, &mut words)))
        } else {
            (None, None)
        };
        // counts[n-1][ngram]
        let mut counts: Vec<HashMap<Vec<u32>, f64>> = vec![HashMap::new(); cfg.order];
        let mut any = false;
        for line in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.is_empty() {
                continue;
            }
            any = true;
            let mut seq: Vec<u32> = start.into_iter().collect();
            seq.extend(toks.iter().map(|w| intern(w, &mut words)));
            seq.extend(end);
            let first = usize::from(start.is_some());
            for i in first..seq.len() {
                for n in 1..=cfg.order.min(i + 1) {
                    *counts[n - 1].entry(seq[i + 1 - n..=i].to_vec()).or_default() += 1.0;
                }
            }
        }
        if !any {
            return Err(Error::Data("language model corpus is empty".into()));
        }
        let ids: HashMap<String, u32> = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        let d = cfg.discount;
        // context totals and distinct continuations per history
        let mut ctx: Vec<HashMap<Vec<u32>, (f64, f64)>> = vec![HashMap::new(); cfg.order];
        for n in 2..=cfg.order {
            for (g, &c) in &counts[n - 1] {
                let e = ctx[n - 2].entry(g[..n - 1].to_vec()).or_default();
                e.0 += c;
                e.1 += 1.0;
            }
        }
        let total: f64 = counts[0].values().sum();
        let denom = total + cfg.unk_count;
        let mut probs: HashMap<Vec<u32>, f64> = HashMap::new();
        for (id, w) in words.iter().enumerate() {
            let id = id as u32;
            let p = if Some(id) == start {
                0.0
            } else if w == UNKNOWN {
                cfg.unk_count / denom
            } else {
                counts[0].get(&vec![id]).copied().unwrap_or(0.0) / denom
            };
            probs.insert(vec![id], p);
        }
        let lambda = |h: &[u32]| -> Option<f64> {
            ctx.get(h.len().wrapping_sub(1)).and_then(|m| m.get(h)).map(|&(c, n1)| d * n1 / c)
        };
        for n in 2..=cfg.order {
            let mut level: Vec<(Vec<u32>, f64)> = Vec::with_capacity(counts[n - 1].len());
            for (g, &c) in &counts[n - 1] {
                let h = &g[..n - 1];
                let (ch, _) = ctx[n - 2][h];
                let lower = prob_from(&probs, &lambda, &g[1..]);
                level.push((g.clone(), (c - d).max(0.0) / ch + lambda(h).expect("seen context") * lower));
            }
            probs.extend(level);
        }
        let mut table = HashMap::with_capacity(probs.len());
        for (g, p) in probs {
            let log10_prob = if g.len() == 1 && Some(g[0]) == start { NEVER } else { p.log10() };
            let log10_backoff = if g.len() < cfg.order { lambda(&g).map(f64::log10).unwrap_or(0.0) } else { 0.0 };
            table.insert(g, Entry { log10_prob, log10_backoff });
        }
        Ok(Self { order: cfg.order, sentence_markers: cfg.sentence_markers, words, ids, table })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.words
    }

    fn id(&self, w: &str) -> u32 {
        self.ids.get(w).or_else(|| self.ids.get(UNKNOWN)).copied().unwrap_or(0)
    }

    /// Natural-log probability of word id `w` after context `h` (oldest first).
    fn ln_prob_id(&self, h: &[u32], w: u32) -> f64 {
        let mut backoff = 0.0;
        for skip in 0..=h.len() {
            let hist = &h[skip..];
            let mut g = hist.to_vec();
            g.push(w);
            if let Some(e) = self.table.get(&g) {
                let lp = if e.log10_prob <= NEVER { f64::NEG_INFINITY } else { e.log10_prob };
                return (backoff + lp) * std::f64::consts::LN_10;
            }
            if let Some(e) = self.table.get(hist) {
                if !hist.is_empty() {
                    backoff += e.log10_backoff;
                }
            }
        }
        f64::NEG_INFINITY
    }

    /// `ln P(word | context words)`; unknown words score as `<unk>`.
    pub fn ln_prob(&self, context: &[&str], word: &str) -> f64 {
        let h: Vec<u32> = context.iter().map(|w| self.id(w)).collect();
        let keep = h.len().saturating_sub(self.order - 1);
        self.ln_prob_id(&h[keep..], self.id(word))
    }

    pub fn begin(&self) -> LmState {
        if self.sentence_markers && self.order > 1 {
            vec![self.id(SENTENCE_START)]
        } else {
            Vec::new()
        }
    }

    /// Scores `word` in `state`, returning the natural-log probability and the
    /// successor state.
    pub fn advance(&self, state: &LmState, word: &str) -> (f64, LmState) {
        let w = self.id(word);
        let lp = self.ln_prob_id(state, w);
        let mut next = state.clone();
        next.push(w);
        if next.len() > self.order - 1 {
            next.drain(..next.len() - (self.order - 1));
        }
        (lp, next)
    }

    /// `ln P(</s> | state)`, or zero without sentence markers.
    pub fn finish(&self, state: &LmState) -> f64 {
        if self.sentence_markers {
            self.ln_prob_id(state, self.id(SENTENCE_END))
        } else {
            0.0
        }
    }

    /// Natural-log probability of a word sequence including the sentence
    /// markers when enabled.
    pub fn score(&self, words: &[&str]) -> f64 {
        let mut st = self.begin();
        let mut total = 0.0;
        for w in words {
            let (lp, next) = self.advance(&st, w);
            total += lp;
            st = next;
        }
        total + self.finish(&st)
    }

    /// Writes the ARPA-style table: `\data\` counts, then per order sorted
    /// `log10 prob <TAB> n-gram [<TAB> log10 backoff]` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_arpa()).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn to_arpa(&self) -> String {
        let mut by_order: Vec<Vec<(String, &Entry, usize)>> = vec![Vec::new(); self.order];
        for (g, e) in &self.table {
            let text = g.iter().map(|&i| self.words[i as usize].as_str()).collect::<Vec<_>>().join(" ");
            by_order[g.len() - 1].push((text, e, g.len()));
        }
        let mut out = String::new();
        let _ = writeln!(out, "# markers={}", self.sentence_markers);
        out.push_str("\\data\\\n");
        for (n, level) in by_order.iter().enumerate() {
            let _ = writeln!(out, "ngram {}={}", n + 1, level.len());
        }
        for (n, level) in by_order.iter_mut().enumerate() {
            level.sort_by(|a, b| a.0.cmp(&b.0));
            let _ = write!(out, "\n\\{}-grams:\n", n + 1);
            for (text, e, len) in level.iter() {
                let _ = write!(out, "{:.12}\t{text}", e.log10_prob);
                if *len < self.order {
                    let _ = write!(out, "\t{:.12}", e.log10_backoff);
                }
                out.push('\n');
            }
        }
        out.push_str("\n\\end\\\n");
        out
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_arpa(&text)
    }

    pub fn from_arpa(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Data(format!("language model: {m}"));
        let mut sentence_markers = false;
        let mut order = 0;
        let mut words: Vec<String> = Vec::new();
        let mut ids: HashMap<String, u32> = HashMap::new();
        let mut table = HashMap::new();
        let mut section = 0usize;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if let Some(m) = line.strip_prefix("# markers=") {
                sentence_markers = m == "true";
                continue;
            }
            if line.is_empty() || line == "\\data\\" || line == "\\end\\" {
                continue;
            }
            if let Some(rest) = line.strip_prefix("ngram ") {
                let n: usize = rest.split('=').next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(format!("line {}", ln + 1)))?;
                order = order.max(n);
                continue;
            }
            if let Some(n) = line.strip_prefix('\\').and_then(|s| s.strip_suffix("-grams:")) {
                section = n.parse().map_err(|_| bad(format!("bad section header on line {}", ln + 1)))?;
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if section == 0 || fields.len() < 2 {
                return Err(bad(format!("unexpected line {}", ln + 1)));
            }
            let log10_prob: f64 = fields[0].parse().map_err(|_| bad(format!("bad probability on line {}", ln + 1)))?;
            let log10_backoff: f64 = match fields.get(2) {
                Some(b) => b.parse().map_err(|_| bad(format!("bad backoff on line {}", ln + 1)))?,
                None => 0.0,
            };
            let g: Vec<u32> = fields[1]
                .split(' ')
                .map(|w| {
                    *ids.entry(w.to_string()).or_insert_with(|| {
                        words.push(w.to_string());
                        (words.len() - 1) as u32
                    })
                })
                .collect();
            if g.len() != section {
                return Err(bad(format!("n-gram on line {} does not match its section", ln + 1)));
            }
            table.insert(g, Entry { log10_prob, log10_backoff });
        }
        if order == 0 || !ids.contains_key(UNKNOWN) {
            return Err(bad("missing header or <unk> entry".into()));
        }
        Ok(Self { order, sentence_markers, words, ids, table })
    }
}

fn prob_from(
    probs: &HashMap<Vec<u32>, f64>,
    lambda: &impl Fn(&[u32]) -> Option<f64>,
    g: &[u32],
) -> f64 {
    if let Some(&p) = probs.get(g) {
        return p;
    }
    let h = &g[..g.len() - 1];
    let lower = prob_from(probs, lambda, &g[1..]);
    lambda(h).unwrap_or(1.0) * lower
}
