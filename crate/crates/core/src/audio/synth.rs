//! Synthetic vowel-language corpus for smoke tests and toy experiments.

use std::f64::consts::PI;
use std::path::Path;

use super::{write_wav, TARGET_RATE};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::rng::{hash_str, CounterRng};

/// Characters shared by all toy languages with their base formants (Hz).
pub const TOY_CHARS: [(char, f64, f64); 5] =
    [('a', 730.0, 1090.0), ('e', 530.0, 1840.0), ('i', 270.0, 2290.0), ('o', 570.0, 840.0), ('u', 300.0, 870.0)];

/// A synthetic language: shared vowel inventory, its own vocal-tract scale,
/// pitch and word list.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyLanguage {
    pub name: String,
    pub formant_scale: f64,
    pub pitch_hz: f64,
    pub lexicon: Vec<String>,
}

impl ToyLanguage {
    pub fn new(name: &str, formant_scale: f64, pitch_hz: f64) -> Self {
        let mut rng = CounterRng::new(hash_str(name));
        let mut lexicon: Vec<String> = Vec::new();
        while lexicon.len() < 8 {
            let len = 2 + rng.below(2);
            let w: String = (0..len).map(|_| TOY_CHARS[rng.below(5)].0).collect();
            if !lexicon.contains(&w) {
                lexicon.push(w);
            }
        }
        Self { name: name.into(), formant_scale, pitch_hz, lexicon }
    }

    /// Sentence of 5–7 lexicon words; consecutive words follow a fixed
    /// successor preference so that an n-gram model has structure to learn.
    pub fn sentence(&self, rng: &mut CounterRng) -> String {
        let n = 5 + rng.below(3);
        let mut idx = rng.below(self.lexicon.len());
        let mut words = Vec::with_capacity(n);
        for _ in 0..n {
            words.push(self.lexicon[idx].as_str());
            idx = if rng.uniform() < 0.7 { (idx * 3 + 1) % self.lexicon.len() } else { rng.below(self.lexicon.len()) };
        }
        words.join(" ")
    }
}

/// The three default toy languages.
pub fn toy_languages() -> Vec<ToyLanguage> {
    vec![ToyLanguage::new("toy_a", 1.0, 120.0), ToyLanguage::new("toy_b", 1.12, 190.0), ToyLanguage::new("toy_c", 0.9, 150.0)]
}

fn resonate(x: &mut [f64], freq: f64, bw: f64) {
    let fs = TARGET_RATE as f64;
    let r = (-PI * bw / fs).exp();
    let a1 = 2.0 * r * (2.0 * PI * freq / fs).cos();
    let a2 = -r * r;
    let gain = 1.0 - r;
    let (mut y1, mut y2) = (0.0, 0.0);
    for v in x.iter_mut() {
        let y = gain * *v + a1 * y1 + a2 * y2;
        y2 = y1;
        y1 = y;
        *v = y;
    }
}

/// Renders `text` (toy characters and spaces) as a waveform with
/// `pad_s` seconds of padding on each side and Gaussian noise of standard
/// deviation `noise`.
pub fn synth_utterance(lang: &ToyLanguage, text: &str, noise: f64, pad_s: f64, rng: &mut CounterRng) -> Result<Vec<f32>> {
    let fs = TARGET_RATE as f64;
    let pad = (pad_s * fs) as usize;
    let mut out = vec![0.0f64; pad];
    let mut phase = 0.0;
    for (wi, word) in text.split_whitespace().enumerate() {
        if wi > 0 {
            out.extend(std::iter::repeat_n(0.0, (0.06 * fs) as usize));
        }
        for c in word.chars() {
            let &(_, f1, f2) = TOY_CHARS
                .iter()
                .find(|t| t.0 == c)
                .ok_or_else(|| Error::Data(format!("`{c}` is not a toy character")))?;
            let n = ((0.11 + 0.03 * rng.uniform()) * fs) as usize;
            let pitch = lang.pitch_hz * (1.0 + 0.05 * (rng.uniform() - 0.5));
            let mut seg = vec![0.0; n];
            for (i, v) in seg.iter_mut().enumerate() {
                phase += pitch / fs;
                if phase >= 1.0 {
                    phase -= 1.0;
                    *v = 1.0;
                }
                *v += 0.02 * rng.normal();
                let _ = i;
            }
            let s = lang.formant_scale;
            let mut mix = seg.clone();
            resonate(&mut mix, f1 * s, 80.0);
            let mut b = seg.clone();
            resonate(&mut b, f2 * s, 100.0);
            let mut c3 = seg;
            resonate(&mut c3, 2500.0 * s, 120.0);
            let ramp = (0.01 * fs) as usize;
            for i in 0..n {
                let env = (i.min(n - 1 - i) as f64 / ramp as f64).min(1.0);
                mix[i] = env * (mix[i] + 0.6 * b[i] + 0.3 * c3[i]);
            }
            out.extend(mix);
        }
    }
    out.extend(std::iter::repeat_n(0.0, pad));
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    Ok(out.iter().map(|v| (0.5 * v / peak + noise * rng.normal()) as f32).collect())
}

/// In-memory corpus of `per_language` utterances per language, with
/// transcripts and background noise 0.001.
pub fn toy_utterances(langs: &[ToyLanguage], per_language: usize, seed: u64) -> Result<Vec<Utterance<f32>>> {
    let mut out = Vec::new();
    for lang in langs {
        let mut rng = CounterRng::new(seed).fork(hash_str(&lang.name));
        for i in 0..per_language {
            let text = lang.sentence(&mut rng);
            let samples = synth_utterance(lang, &text, 0.001, 0.05, &mut rng)?;
            out.push(Utterance::new(format!("{}/{i:05}", lang.name), lang.name.clone(), samples).with_transcript(text));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCorpusConfig {
    /// Single-utterance recordings per language.
    pub utterances: usize,
    /// Extra recordings per language with several utterances separated by
    /// long pauses.
    pub multi: usize,
    /// Extra noisy recordings per language (expected to be rejected).
    pub noisy: usize,
    /// Extra long continuous recordings per language (above 30 s).
    pub long: usize,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self { utterances: 40, multi: 2, noisy: 3, long: 1, seed: 0 }
    }
}

/// Writes raw recordings to `out/<language>/<id>.wav` with a `<id>.txt`
/// transcript next to each single-utterance file. Returns the number of
/// files written.
pub fn make_toy_corpus(out: &Path, langs: &[ToyLanguage], cfg: &ToyCorpusConfig) -> Result<usize> {
    let mut count = 0;
    for lang in langs {
        let dir = out.join(&lang.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
        let mut rng = CounterRng::new(cfg.seed).fork(hash_str(&lang.name));
        for i in 0..cfg.utterances {
            let text = lang.sentence(&mut rng);
            let w = synth_utterance(lang, &text, 0.0003, 0.5, &mut rng)?;
            write_wav(&dir.join(format!("utt{i:04}.wav")), &w, TARGET_RATE)?;
            std::fs::write(dir.join(format!("utt{i:04}.txt")), format!("{text}\n"))
                .map_err(|e| Error::io("writing transcript", e))?;
            count += 1;
        }
        for i in 0..cfg.multi {
            let mut w = Vec::new();
            for _ in 0..3 {
                let text = lang.sentence(&mut rng);
                w.extend(synth_utterance(lang, &text, 0.0003, 0.4, &mut rng)?);
            }
            write_wav(&dir.join(format!("multi{i:04}.wav")), &w, TARGET_RATE)?;
            count += 1;
        }
        for i in 0..cfg.noisy {
            let text = lang.sentence(&mut rng);
            let w = synth_utterance(lang, &text, 0.08, 0.5, &mut rng)?;
            write_wav(&dir.join(format!("noisy{i:04}.wav")), &w, TARGET_RATE)?;
            std::fs::write(dir.join(format!("noisy{i:04}.txt")), format!("{text}\n"))
                .map_err(|e| Error::io("writing transcript", e))?;
            count += 1;
        }
        for i in 0..cfg.long {
            let mut text = String::new();
            while text.split_whitespace().count() < 90 {
                text.push_str(&lang.sentence(&mut rng));
                text.push(' ');
            }
            let w = synth_utterance(lang, &text, 0.0003, 0.5, &mut rng)?;
            write_wav(&dir.join(format!("long{i:04}.wav")), &w, TARGET_RATE)?;
            count += 1;
        }
    }
    Ok(count)
}
