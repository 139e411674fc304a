use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::audio::TARGET_RATE;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

pub const EMBEDDING_DIM: usize = 256;
pub const MEL_BANDS: usize = 40;
/// Raw feature size: band means, band standard deviations, log-pitch
/// median and interquartile range, voiced fraction, unvoiced flag.
pub const RAW_DIM: usize = 2 * MEL_BANDS + 4;
const PROJECTION_SEED: u64 = 0x5eed_0256;
const FRAME: usize = 400;
const HOP: usize = 160;
const NFFT: usize = 512;
const F0_MIN: f64 = 60.0;
const F0_MAX: f64 = 400.0;
const PITCH_FRAME: usize = 640;
const PITCH_REF_HZ: f64 = 150.0;
const PITCH_WEIGHT: f64 = 8.0;
/// Frames this far below the loudest frame are excluded from band statistics.
const SILENCE_DB: f64 = 40.0;
const LOG_FLOOR: f64 = 1e-10;

/// Unit-norm spectral voice embedding. This is a deterministic stand-in
/// for a neural speaker encoder, not an equivalent of one.
#[derive(Debug, Clone, PartialEq)]
pub struct VoiceEmbedding {
    pub id: String,
    pub vector: Vec<f32>,
    /// No pitch was found; the pitch statistics hold sentinel values.
    pub unvoiced: bool,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over `NFFT / 2 + 1` bins from 0 Hz to Nyquist.
fn mel_filters() -> Vec<Vec<f64>> {
    let fs = TARGET_RATE as f64;
    let bins = NFFT / 2 + 1;
    let top = hz_to_mel(fs / 2.0);
    let edges: Vec<f64> = (0..MEL_BANDS + 2).map(|i| mel_to_hz(top * i as f64 / (MEL_BANDS + 1) as f64)).collect();
    (0..MEL_BANDS)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * fs / NFFT as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

fn log_mel(samples: &[f64]) -> Vec<[f64; MEL_BANDS]> {
    let filters = mel_filters();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(NFFT);
    let window: Vec<f64> = (0..FRAME).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / FRAME as f64).cos()).collect();
    let mut out = Vec::new();
    let mut start = 0;
    while start + FRAME <= samples.len() {
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); NFFT];
        for i in 0..FRAME {
            buf[i].re = samples[start + i] * window[i];
        }
        fft.process(&mut buf);
        let power: Vec<f64> = buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
        let mut row = [0.0; MEL_BANDS];
        for (b, f) in filters.iter().enumerate() {
            let e: f64 = f.iter().zip(&power).map(|(w, p)| w * p).sum();
            row[b] = (e + LOG_FLOOR).ln();
        }
        out.push(row);
        start += HOP;
    }
    out
}

/// Autocorrelation F0 (Hz) of each sufficiently loud frame with a clear
/// periodicity peak in 60–400 Hz.
pub fn pitch_track(samples: &[f64]) -> Vec<f64> {
    let fs = TARGET_RATE as f64;
    let min_lag = (fs / F0_MAX).floor() as usize;
    let max_lag = (fs / F0_MIN).ceil() as usize;
    let frames: Vec<&[f64]> = samples.chunks_exact(PITCH_FRAME).collect();
    let energies: Vec<f64> = frames.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>()).collect();
    let loudest = energies.iter().cloned().fold(0.0, f64::max);
    let mut f0 = Vec::new();
    for (frame, &e) in frames.iter().zip(&energies) {
        if e <= 0.0 || e < loudest * 1e-3 {
            continue;
        }
        let ac = |lag: usize| -> f64 {
            let n = PITCH_FRAME - lag;
            let num: f64 = (0..n).map(|i| frame[i] * frame[i + lag]).sum();
            let a: f64 = frame[..n].iter().map(|v| v * v).sum();
            let b: f64 = frame[lag..].iter().map(|v| v * v).sum();
            num / (a * b).sqrt().max(LOG_FLOOR)
        };
        let r: Vec<f64> = (min_lag - 1..=max_lag + 1).map(ac).collect();
        let peak = r[1..r.len() - 1].iter().cloned().fold(f64::MIN, f64::max);
        if peak < 0.5 {
            continue;
        }
        // first local maximum close to the global one, avoiding octave errors
        let Some(best) = (1..r.len() - 1).find(|&i| r[i] >= 0.9 * peak && r[i] >= r[i - 1] && r[i] >= r[i + 1]) else {
            continue;
        };
        // parabolic refinement
        let (a, b, c) = (r[best - 1], r[best], r[best + 1]);
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 1e-12 { 0.5 * (a - c) / denom } else { 0.0 };
        let lag = (min_lag - 1 + best) as f64 + shift.clamp(-0.5, 0.5);
        f0.push(fs / lag);
    }
    f0
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// The 84-dimensional raw feature and the unvoiced flag. Band means are
/// centred across bands so that an overall gain change cancels.
pub fn raw_features(samples: &[f32]) -> Result<(Vec<f64>, bool)> {
    if samples.len() < TARGET_RATE as usize {
        return Err(Error::TooShort { op: "embed_voice", needed: TARGET_RATE as usize, got: samples.len() });
    }
    let x: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let mut mel = log_mel(&x);
    let frame_energy = |row: &[f64; MEL_BANDS]| row.iter().map(|v| v.exp()).sum::<f64>().ln();
    let loudest = mel.iter().map(frame_energy).fold(f64::MIN, f64::max);
    mel.retain(|row| frame_energy(row) > loudest - SILENCE_DB / 10.0 * 10f64.ln());
    let n = mel.len() as f64;
    let mut mean = [0.0; MEL_BANDS];
    for row in &mel {
        for b in 0..MEL_BANDS {
            mean[b] += row[b] / n;
        }
    }
    let mut std = [0.0; MEL_BANDS];
    for row in &mel {
        for b in 0..MEL_BANDS {
            std[b] += (row[b] - mean[b]).powi(2) / n;
        }
    }
    let centre = mean.iter().sum::<f64>() / MEL_BANDS as f64;
    let mut feat: Vec<f64> = mean.iter().map(|m| m - centre).collect();
    feat.extend(std.iter().map(|v| v.sqrt()));
    let frames = (x.len() / PITCH_FRAME).max(1);
    let mut f0 = pitch_track(&x);
    let unvoiced = f0.is_empty();
    if unvoiced {
        feat.extend([PITCH_WEIGHT * (F0_MIN / PITCH_REF_HZ).ln(), 0.0, 0.0, 1.0]);
    } else {
        f0.sort_by(f64::total_cmp);
        let logs: Vec<f64> = f0.iter().map(|f| (f / PITCH_REF_HZ).ln()).collect();
        let iqr = quantile(&logs, 0.75) - quantile(&logs, 0.25);
        feat.extend([
            PITCH_WEIGHT * quantile(&logs, 0.5),
            PITCH_WEIGHT * iqr,
            f0.len() as f64 / frames as f64,
            0.0,
        ]);
    }
    Ok((feat, unvoiced))
}

/// Fixed `EMBEDDING_DIM × RAW_DIM` matrix with orthonormal columns,
/// obtained by Gram–Schmidt on seeded Gaussian columns.
pub fn projection() -> &'static [Vec<f64>] {
    static P: std::sync::OnceLock<Vec<Vec<f64>>> = std::sync::OnceLock::new();
    P.get_or_init(|| {
        let mut rng = CounterRng::new(PROJECTION_SEED);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(RAW_DIM);
        while cols.len() < RAW_DIM {
            let mut v: Vec<f64> = (0..EMBEDDING_DIM).map(|_| rng.normal()).collect();
            for _ in 0..2 {
                for c in &cols {
                    let d: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                    v.iter_mut().zip(c).for_each(|(x, y)| *x -= d * y);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        cols
    })
}

/// Embeds an utterance: raw features, orthonormal lift to 256
/// dimensions, L2 normalization.
pub fn embed_voice(id: &str, samples: &[f32]) -> Result<VoiceEmbedding> {
    let (feat, unvoiced) = raw_features(samples)?;
    let mut v = vec![0.0f64; EMBEDDING_DIM];
    for (c, f) in projection().iter().zip(&feat) {
        v.iter_mut().zip(c).for_each(|(x, y)| *x += f * y);
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Numeric(format!("voice embedding of `{id}` has norm {norm}")));
    }
    Ok(VoiceEmbedding { id: id.to_string(), vector: v.iter().map(|x| (x / norm) as f32).collect(), unvoiced })
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum();
    let na: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb).max(1e-12)
}
