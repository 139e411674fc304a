use std::io::{Read, Seek};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::resample::resample;
use crate::error::{Error, Result};

/// Sample rate of every buffer after ingestion.
pub const TARGET_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    /// Mono samples in [−1, 1].
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source: String,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>, sample_rate: u32, source: impl Into<String>) -> Self {
        Self { samples, sample_rate, source: source.into() }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decodes RIFF/WAVE PCM (integer 8–32 bit or 32-bit float, any channel
/// count and rate) into a 16 kHz mono buffer. Channels are averaged and
/// the signal is resampled with a Kaiser-windowed sinc filter.
pub fn ingest_reader<R: Read + Seek>(reader: R, source: &str) -> Result<AudioBuffer> {
    let mut wav = WavReader::new(reader)?;
    let spec = wav.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Data(format!("{source}: zero channels")));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Data(format!("{source}: unsupported float width {}", spec.bits_per_sample)));
            }
            wav.samples::<f32>().collect::<std::result::Result<_, _>>()?
        }
        SampleFormat::Int => {
            let scale = (1u64 << (spec.bits_per_sample - 1)) as f32;
            wav.samples::<i32>().map(|s| s.map(|v| v as f32 / scale)).collect::<std::result::Result<_, _>>()?
        }
    };
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(channels).map(|f| f.iter().sum::<f32>() / channels as f32).collect()
    };
    let samples = resample(&mono, spec.sample_rate, TARGET_RATE);
    Ok(AudioBuffer::new(samples, TARGET_RATE, source))
}

pub fn ingest_file(path: &Path) -> Result<AudioBuffer> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    ingest_reader(std::io::BufReader::new(file), &path.display().to_string())
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, samples: &[f32], sample_rate: u32) -> Result<()> {
    let spec = WavSpec { channels: 1, sample_rate, bits_per_sample: 16, sample_format: SampleFormat::Int };
    let mut w = WavWriter::create(path, spec)?;
    for &s in samples {
        w.write_sample(quantize_i16(s))?;
    }
    w.finalize()?;
    Ok(())
}

pub(crate) fn quantize_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}
