use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{ingest_file, TARGET_RATE};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::rng::{hash_str, CounterRng};

/// One prepared audio chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceRecord {
    /// Path relative to the manifest root.
    pub path: String,
    pub num_samples: u64,
    pub language: String,
    pub snr_db: f64,
    pub transcript: Option<String>,
}

impl UtteranceRecord {
    pub fn duration(&self) -> f64 {
        self.num_samples as f64 / TARGET_RATE as f64
    }
}

/// Tab-separated index: the first line is the root directory, then
/// `path  num_samples  language  snr_db  [transcript]` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub records: Vec<UtteranceRecord>,
}

impl Manifest {
    pub fn to_tsv(&self) -> Result<String> {
        let mut s = format!("{}\n", self.root.display());
        for r in &self.records {
            let fields = [&r.path, &r.language];
            if fields.iter().any(|f| f.contains(['\t', '\n'])) || r.transcript.as_deref().is_some_and(|t| t.contains(['\t', '\n'])) {
                return Err(Error::Data(format!("manifest field of `{}` contains a tab or newline", r.path)));
            }
            s.push_str(&format!("{}\t{}\t{}\t{:.2}", r.path, r.num_samples, r.language, r.snr_db));
            if let Some(t) = &r.transcript {
                s.push('\t');
                s.push_str(t);
            }
            s.push('\n');
        }
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tsv()?).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let root = PathBuf::from(lines.next().ok_or_else(|| Error::Data("manifest is empty".into()))?);
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Data(format!("manifest row {} is malformed: `{line}`", i + 2));
            if f.len() < 4 || f.len() > 5 {
                return Err(bad());
            }
            records.push(UtteranceRecord {
                path: f[0].to_string(),
                num_samples: f[1].parse().map_err(|_| bad())?,
                language: f[2].to_string(),
                snr_db: f[3].parse().map_err(|_| bad())?,
                transcript: f.get(4).map(|s| s.to_string()),
            });
        }
        Ok(Self { root, records })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn total_hours(&self) -> f64 {
        self.records.iter().map(|r| r.duration()).sum::<f64>() / 3600.0
    }

    /// Loads every record as an in-memory utterance keyed by its path.
    pub fn load_utterances(&self) -> Result<Vec<Utterance<f32>>> {
        self.records
            .par_iter()
            .map(|r| {
                let buf = ingest_file(&self.root.join(&r.path))?;
                let mut u = Utterance::new(r.path.clone(), r.language.clone(), buf.samples);
                u.transcript = r.transcript.clone();
                Ok(u)
            })
            .collect()
    }
}

/// Seeded split into train and validation records, stratified by
/// language. Each language with at least two records contributes
/// `round(n · (1 − train_ratio))` records (at most `n − 1`) to validation;
/// smaller languages go entirely to train with a warning. Both outputs are
/// sorted by language and path.
pub fn build_manifest(
    records: &[UtteranceRecord],
    train_ratio: f64,
    seed: u64,
) -> Result<(Vec<UtteranceRecord>, Vec<UtteranceRecord>)> {
    if !(0.0..=1.0).contains(&train_ratio) {
        return Err(Error::invalid("build_manifest", format!("train ratio must lie in [0, 1], got {train_ratio}")));
    }
    let mut by_lang: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in records {
        by_lang.entry(&r.language).or_default().push(r);
    }
    let (mut train, mut valid) = (Vec::new(), Vec::new());
    for (lang, mut group) in by_lang {
        group.sort_by(|a, b| a.path.cmp(&b.path));
        if group.len() < 2 {
            log::warn!("language `{lang}` has {} record(s); all assigned to train", group.len());
            train.extend(group.into_iter().cloned());
            continue;
        }
        let n = group.len();
        let n_valid = ((n as f64 * (1.0 - train_ratio)).round() as usize).min(n - 1);
        CounterRng::new(seed).fork(hash_str(lang)).shuffle(&mut group);
        valid.extend(group[..n_valid].iter().map(|r| (*r).clone()));
        train.extend(group[n_valid..].iter().map(|r| (*r).clone()));
    }
    let key = |r: &UtteranceRecord| (r.language.clone(), r.path.clone());
    train.sort_by_key(key);
    valid.sort_by_key(key);
    Ok((train, valid))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DurationRow {
    pub language: String,
    pub train_hours: f64,
    pub valid_hours: f64,
}

/// Per-language train/valid hours.
#[derive(Debug, Clone, PartialEq)]
pub struct DurationSummary {
    pub rows: Vec<DurationRow>,
}

impl DurationSummary {
    pub fn new(train: &[UtteranceRecord], valid: &[UtteranceRecord]) -> Self {
        let mut m: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for r in train {
            m.entry(r.language.clone()).or_default().0 += r.duration() / 3600.0;
        }
        for r in valid {
            m.entry(r.language.clone()).or_default().1 += r.duration() / 3600.0;
        }
        let rows = m
            .into_iter()
            .map(|(language, (train_hours, valid_hours))| DurationRow { language, train_hours, valid_hours })
            .collect();
        Self { rows }
    }

    pub fn total_hours(&self) -> f64 {
        self.rows.iter().map(|r| r.train_hours + r.valid_hours).sum()
    }
}

impl fmt::Display for DurationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<16}{:>14}{:>14}", "language", "train (h)", "valid (h)")?;
        for r in &self.rows {
            writeln!(f, "{:<16}{:>14.4}{:>14.4}", r.language, r.train_hours, r.valid_hours)?;
        }
        let (t, v) = self.rows.iter().fold((0.0, 0.0), |a, r| (a.0 + r.train_hours, a.1 + r.valid_hours));
        write!(f, "{:<16}{:>14.4}{:>14.4}", "total", t, v)
    }
}
