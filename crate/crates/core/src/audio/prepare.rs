//! Raw recordings to filtered chunks and train/valid manifests.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{build_manifest, ingest_file, vad_chunk, wada_snr, write_wav, DurationSummary, Manifest, UtteranceRecord, VadConfig, TARGET_RATE};
use crate::decode::normalize_text;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub snr_min_db: f64,
    pub min_dur_s: f64,
    pub max_dur_s: f64,
    pub train_ratio: f64,
    pub seed: u64,
    pub vad: VadConfig,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self { snr_min_db: 25.0, min_dur_s: 1.0, max_dur_s: 30.0, train_ratio: 0.9, seed: 0, vad: VadConfig::default() }
    }
}

impl PrepareConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.min_dur_s > 0.0 && self.min_dur_s <= self.max_dur_s) {
            errs.push(format!("need 0 < min_dur_s <= max_dur_s, got {} and {}", self.min_dur_s, self.max_dur_s));
        }
        if !(0.0..=1.0).contains(&self.train_ratio) {
            errs.push(format!("train_ratio must lie in [0, 1], got {}", self.train_ratio));
        }
        if self.vad.mode > 3 {
            errs.push(format!("vad.mode must be 0-3, got {}", self.vad.mode));
        }
        if !(self.vad.hop_ms > 0.0 && self.vad.frame_ms >= self.vad.hop_ms) {
            errs.push("vad needs 0 < hop_ms <= frame_ms".into());
        }
        if self.vad.sample_rate != crate::audio::TARGET_RATE {
            errs.push(format!("vad.sample_rate must be {}", crate::audio::TARGET_RATE));
        }
        errs
    }
}

/// Counts of what happened to the input.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrepareReport {
    pub files: usize,
    pub chunks: usize,
    pub rejected_snr: usize,
    pub rejected_duration: usize,
    pub accepted: usize,
}

#[derive(Debug)]
pub struct PrepareOutput {
    pub train: Manifest,
    pub valid: Manifest,
    pub summary: DurationSummary,
    pub report: PrepareReport,
}

fn input_files(input: &Path) -> Result<Vec<(String, PathBuf)>> {
    let read = |p: &Path| std::fs::read_dir(p).map_err(|e| Error::io(format!("listing {}", p.display()), e));
    let mut files = Vec::new();
    for lang_dir in read(input)? {
        let lang_dir = lang_dir.map_err(|e| Error::io("listing input", e))?.path();
        if !lang_dir.is_dir() {
            continue;
        }
        let lang = lang_dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        for f in read(&lang_dir)? {
            let f = f.map_err(|e| Error::io("listing input", e))?.path();
            if f.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav")) {
                files.push((lang.clone(), f));
            }
        }
    }
    files.sort();
    Ok(files)
}

struct FileResult {
    records: Vec<UtteranceRecord>,
    chunks: usize,
    rejected_snr: usize,
    rejected_duration: usize,
}

fn process_file(lang: &str, path: &Path, out: &Path, cfg: &PrepareConfig) -> Result<FileResult> {
    let buf = ingest_file(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("audio");
    let chunks = vad_chunk(&buf.samples, &cfg.vad);
    let transcript = if chunks.len() == 1 {
        match std::fs::read_to_string(path.with_extension("txt")) {
            Ok(t) => Some(normalize_text(&t, lang)).filter(|t| !t.is_empty()),
            Err(_) => None,
        }
    } else {
        None
    };
    let mut res = FileResult { records: Vec::new(), chunks: chunks.len(), rejected_snr: 0, rejected_duration: 0 };
    for (k, &(s, e)) in chunks.iter().enumerate() {
        let samples = &buf.samples[s..e];
        let dur = samples.len() as f64 / TARGET_RATE as f64;
        if dur < cfg.min_dur_s || dur > cfg.max_dur_s {
            res.rejected_duration += 1;
            continue;
        }
        let snr = wada_snr(samples);
        if snr < cfg.snr_min_db {
            res.rejected_snr += 1;
            continue;
        }
        let rel = format!("{lang}/{stem}_{k:03}.wav");
        write_wav(&out.join(&rel), samples, TARGET_RATE)?;
        res.records.push(UtteranceRecord {
            path: rel,
            num_samples: samples.len() as u64,
            language: lang.to_string(),
            snr_db: snr,
            transcript: transcript.clone(),
        });
    }
    Ok(res)
}

/// Walks `input/<language>/*.wav` (with optional `<stem>.txt` transcripts),
/// splits each file into voiced chunks, keeps chunks within the duration
/// bounds and above the SNR threshold, writes them to
/// `output/<language>/<stem>_<k>.wav` and emits `train.tsv` and
/// `valid.tsv`. Transcripts are attached only to files that yield a
/// single chunk. Files are processed in parallel on the current rayon pool.
pub fn prepare_data(input: &Path, output: &Path, cfg: &PrepareConfig) -> Result<PrepareOutput> {
    let files = input_files(input)?;
    let langs: std::collections::BTreeSet<&str> = files.iter().map(|(l, _)| l.as_str()).collect();
    for l in &langs {
        let d = output.join(l);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
    }
    let results: Vec<FileResult> =
        files.par_iter().map(|(lang, path)| process_file(lang, path, output, cfg)).collect::<Result<_>>()?;
    let mut report = PrepareReport { files: files.len(), ..Default::default() };
    let mut records = Vec::new();
    for r in results {
        report.chunks += r.chunks;
        report.rejected_snr += r.rejected_snr;
        report.rejected_duration += r.rejected_duration;
        records.extend(r.records);
    }
    report.accepted = records.len();
    let (train, valid) = build_manifest(&records, cfg.train_ratio, cfg.seed)?;
    let summary = DurationSummary::new(&train, &valid);
    let train = Manifest { root: output.to_path_buf(), records: train };
    let valid = Manifest { root: output.to_path_buf(), records: valid };
    train.write(&output.join("train.tsv"))?;
    valid.write(&output.join("valid.tsv"))?;
    log::info!(
        "prepare files={} chunks={} accepted={} rejected_snr={} rejected_duration={}",
        report.files,
        report.chunks,
        report.accepted,
        report.rejected_snr,
        report.rejected_duration
    );
    Ok(PrepareOutput { train, valid, summary, report })
}
