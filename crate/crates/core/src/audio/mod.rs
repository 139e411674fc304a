//! Audio ingestion, voice activity chunking, SNR estimation, synthetic
//! corpora and manifests.

mod manifest;
mod prepare;
mod resample;
mod synth;
mod vad;
mod wada;
mod wav;

pub use manifest::{build_manifest, DurationRow, DurationSummary, Manifest, UtteranceRecord};
pub use prepare::{prepare_data, PrepareConfig, PrepareOutput, PrepareReport};
pub use resample::resample;
pub use synth::{make_toy_corpus, synth_utterance, toy_languages, toy_utterances, ToyCorpusConfig, ToyLanguage, TOY_CHARS};
pub use vad::{frame_energies, vad_chunk, VadConfig};
pub use wada::{
    amplitude_statistic, wada_snr, wada_snr_with, WadaTable, MAX_SNR_DB, MIN_SNR_DB, SPEECH_GAMMA_SHAPE, TABLE_SAMPLES,
    TABLE_SEED, TABLE_STEP_DB,
};
pub use wav::{ingest_file, ingest_reader, write_wav, AudioBuffer, TARGET_RATE};
