use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadConfig {
    pub sample_rate: u32,
    pub frame_ms: f64,
    pub hop_ms: f64,
    /// Aggressiveness 0–3, mapped to a margin of 6/9/12/15 dB above the
    /// noise floor.
    pub mode: u8,
    /// Frames in the moving-average energy smoother.
    pub smooth_frames: usize,
    /// Voiced runs separated by at most this gap are merged.
    pub hangover_ms: f64,
    /// Upper bound on the noise floor estimate, in dBFS.
    pub max_floor_db: f64,
    pub min_chunk_s: f64,
    pub max_chunk_s: f64,
    /// Window at the end of an overlong chunk searched for a split point.
    pub split_window_s: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            frame_ms: 30.0,
            hop_ms: 10.0,
            mode: 2,
            smooth_frames: 3,
            hangover_ms: 300.0,
            max_floor_db: -50.0,
            min_chunk_s: 1.0,
            max_chunk_s: 30.0,
            split_window_s: 5.0,
        }
    }
}

impl VadConfig {
    pub fn margin_db(&self) -> f64 {
        6.0 + 3.0 * self.mode.min(3) as f64
    }

    fn frame_len(&self) -> usize {
        (self.sample_rate as f64 * self.frame_ms / 1000.0).round() as usize
    }

    fn hop(&self) -> usize {
        (self.sample_rate as f64 * self.hop_ms / 1000.0).round() as usize
    }
}

/// Smoothed log energy (dBFS) of each analysis frame.
pub fn frame_energies(samples: &[f32], cfg: &VadConfig) -> Vec<f64> {
    let (len, hop) = (cfg.frame_len(), cfg.hop());
    if samples.len() < len {
        return Vec::new();
    }
    let n = (samples.len() - len) / hop + 1;
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let f = &samples[i * hop..i * hop + len];
            let e = f.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / len as f64;
            10.0 * (e + 1e-12).log10()
        })
        .collect();
    let w = cfg.smooth_frames.max(1);
    let r = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(r);
            let hi = (i + w - r).min(n);
            raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Voiced chunks as `(start, end)` sample ranges.
///
/// A frame is voiced when its smoothed energy exceeds the noise floor by the
/// mode's margin; the floor is the mean energy of the quietest tenth of
/// frames, capped at `max_floor_db` so that continuous speech is still
/// detected. Runs with gaps up to the hangover are merged, chunks shorter
/// than `min_chunk_s` dropped, and chunks longer than `max_chunk_s` split at
/// the quietest frame of their last `split_window_s` before the limit,
/// repeatedly.
pub fn vad_chunk(samples: &[f32], cfg: &VadConfig) -> Vec<(usize, usize)> {
    let e = frame_energies(samples, cfg);
    if e.is_empty() {
        return Vec::new();
    }
    let mut sorted = e.clone();
    sorted.sort_by(f64::total_cmp);
    let k = (sorted.len() / 10).max(1);
    let floor = (sorted[..k].iter().sum::<f64>() / k as f64).min(cfg.max_floor_db);
    let thr = floor + cfg.margin_db();
    let voiced: Vec<bool> = e.iter().map(|&v| v > thr).collect();
    let (len, hop) = (cfg.frame_len(), cfg.hop());
    let gap = (cfg.hangover_ms / cfg.hop_ms).round() as usize;
    // runs of voiced frames, inclusive frame indices
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (i, &v) in voiced.iter().enumerate() {
        if !v {
            continue;
        }
        match runs.last_mut() {
            Some(last) if i - last.1 <= gap + 1 => last.1 = i,
            _ => runs.push((i, i)),
        }
    }
    let rate = cfg.sample_rate as f64;
    let min_len = (cfg.min_chunk_s * rate).ceil() as usize;
    let max_len = (cfg.max_chunk_s * rate).floor() as usize;
    let window = (cfg.split_window_s * rate) as usize;
    let mut out = Vec::new();
    for (a, b) in runs {
        let mut start = a * hop;
        let end = (b * hop + len).min(samples.len());
        while end - start > max_len {
            let lo_frame = (start + max_len - window).div_ceil(hop);
            let hi_frame = ((start + max_len).saturating_sub(len) / hop).max(lo_frame);
            let split_frame = (lo_frame..=hi_frame.min(e.len() - 1))
                .min_by(|&x, &y| e[x].total_cmp(&e[y]).then(x.cmp(&y)))
                .unwrap_or(lo_frame);
            let split = (split_frame * hop + len / 2).clamp(start + 1, start + max_len);
            if split - start >= min_len {
                out.push((start, split));
            }
            start = split;
        }
        if end - start >= min_len {
            out.push((start, end));
        }
    }
    out
}
