//! Text normalization, n-gram language modelling, CTC decoding and error
//! rates.

mod metrics;
mod ngram;
mod search;
mod text;

pub use metrics::{cer, char_errors, edit_distance, wer, word_errors, ErrorCounts};
pub use ngram::{LmState, NGramConfig, NGramModel, SENTENCE_END, SENTENCE_START, UNKNOWN};
pub use search::{beam_search_decode, greedy_decode, greedy_labels, BeamConfig, DecodeResult, Hypothesis};
pub use text::{normalize_text, normalize_with, speller_for, EnglishSpeller, HindiSpeller, NormalizeConfig, NumberSpeller, DEFAULT_PUNCTUATION};
