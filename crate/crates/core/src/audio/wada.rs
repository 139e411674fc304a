use std::sync::OnceLock;

use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Shape of the Gamma distribution assumed for clean speech amplitudes.
pub const SPEECH_GAMMA_SHAPE: f64 = 0.4;
pub const MIN_SNR_DB: f64 = -20.0;
pub const MAX_SNR_DB: f64 = 100.0;
pub const TABLE_STEP_DB: f64 = 0.5;
pub const TABLE_SAMPLES: usize = 1_000_000;
pub const TABLE_SEED: u64 = 0;
const AMP_FLOOR: f64 = 1e-10;

static SHIPPED: &str = include_str!("../../data/wada_table.tsv");

/// Monotone map from SNR (dB) to the amplitude statistic
/// `G = ln(mean|x|) − mean(ln|x|)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WadaTable {
    pub snr_db: Vec<f64>,
    pub g: Vec<f64>,
}

/// `ln(mean|x|) − mean(ln max(|x|, 1e-10))`.
pub fn amplitude_statistic(x: &[f32]) -> f64 {
    let n = x.len() as f64;
    let (mut sum_abs, mut sum_log) = (0.0, 0.0);
    for &v in x {
        let a = (v as f64).abs().max(AMP_FLOOR);
        sum_abs += a;
        sum_log += a.ln();
    }
    (sum_abs / n).ln() - sum_log / n
}

impl WadaTable {
    /// Monte-Carlo table: `samples` Gamma(0.4)-amplitude speech values with
    /// random sign, plus unit Gaussian noise scaled to each SNR on a 0.5 dB
    /// grid over [−20, 100] dB. The same draws serve every grid point, and
    /// the result is forced non-decreasing.
    pub fn generate(samples: usize, seed: u64) -> Self {
        let gamma = Gamma::new(SPEECH_GAMMA_SHAPE, 1.0).expect("valid gamma");
        let mut rs = CounterRng::new(seed).fork(1);
        let mut rn = CounterRng::new(seed).fork(2);
        let speech: Vec<f64> = (0..samples)
            .map(|_| {
                let a: f64 = gamma.sample(&mut rs);
                if rs.uniform() < 0.5 {
                    -a
                } else {
                    a
                }
            })
            .collect();
        let noise: Vec<f64> = (0..samples).map(|_| rn.normal()).collect();
        let power = speech.iter().map(|v| v * v).sum::<f64>() / samples as f64;
        let steps = ((MAX_SNR_DB - MIN_SNR_DB) / TABLE_STEP_DB).round() as usize;
        let snr_db: Vec<f64> = (0..=steps).map(|i| MIN_SNR_DB + i as f64 * TABLE_STEP_DB).collect();
        let mut g: Vec<f64> = snr_db
            .iter()
            .map(|&snr| {
                let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
                let n = samples as f64;
                let (mut sa, mut sl) = (0.0, 0.0);
                for (s, z) in speech.iter().zip(&noise) {
                    let a = (s + sigma * z).abs().max(AMP_FLOOR);
                    sa += a;
                    sl += a.ln();
                }
                (sa / n).ln() - sl / n
            })
            .collect();
        for i in 1..g.len() {
            g[i] = g[i].max(g[i - 1]);
        }
        Self { snr_db, g }
    }

    pub fn to_tsv(&self) -> String {
        let mut s = format!(
            "# gen-wada-table --samples {TABLE_SAMPLES} --seed {TABLE_SEED}\n# snr_db\tg\n"
        );
        for (a, b) in self.snr_db.iter().zip(&self.g) {
            s.push_str(&format!("{a:.1}\t{b:.10}\n"));
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut t = Self { snr_db: Vec::new(), g: Vec::new() };
        for (i, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t').map(str::parse::<f64>);
            match (it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b))) => {
                    t.snr_db.push(a);
                    t.g.push(b);
                }
                _ => return Err(Error::Data(format!("WADA table line {} is malformed", i + 1))),
            }
        }
        if t.g.len() < 2 || t.g.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Data("WADA table must hold at least two non-decreasing entries".into()));
        }
        Ok(t)
    }

    /// The table bundled with the library.
    pub fn shipped() -> &'static Self {
        static TABLE: OnceLock<WadaTable> = OnceLock::new();
        TABLE.get_or_init(|| Self::from_tsv(SHIPPED).expect("bundled WADA table is valid"))
    }

    /// SNR whose table statistic equals `g`, linearly interpolated and
    /// clamped to the table range.
    pub fn invert(&self, g: f64) -> f64 {
        let n = self.g.len();
        if !(g > self.g[0]) {
            return self.snr_db[0];
        }
        if g >= self.g[n - 1] {
            return self.snr_db[n - 1];
        }
        let i = self.g.partition_point(|&v| v <= g);
        let (g0, g1) = (self.g[i - 1], self.g[i]);
        let (s0, s1) = (self.snr_db[i - 1], self.snr_db[i]);
        if g1 == g0 {
            s0
        } else {
            s0 + (g - g0) / (g1 - g0) * (s1 - s0)
        }
    }
}

/// Blind SNR estimate in dB, clamped to [−20, 100]. An all-zero buffer
/// gives the floor.
pub fn wada_snr(samples: &[f32]) -> f64 {
    wada_snr_with(samples, WadaTable::shipped())
}

pub fn wada_snr_with(samples: &[f32], table: &WadaTable) -> f64 {
    if samples.iter().all(|&v| v == 0.0) {
        return MIN_SNR_DB;
    }
    table.invert(amplitude_statistic(samples)).clamp(MIN_SNR_DB, MAX_SNR_DB)
}
