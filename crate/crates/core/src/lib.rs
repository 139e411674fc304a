//! Cross-lingual self-supervised speech representation learning: a small
//! autodiff engine, a masked-contrastive pretraining model with product
//! quantization, CTC finetuning, n-gram fused decoding, audio preparation,
//! speaker analytics and codebook analyses.
//!
//! The numeric core is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix it to `f32` for ordinary use.

pub mod analysis;
pub mod asr;
pub mod audio;
pub mod config;
pub mod data;
pub mod decode;
pub mod error;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod speaker;
pub mod ssl;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Tensor = tensor::Tensor<f32>;
pub type Tape = tensor::Tape<f32>;
pub type ParamStore = tensor::ParamStore<f32>;
pub type AdamState = tensor::AdamState<f32>;
pub type SpeechModel = model::SpeechModel<f32>;
pub type Checkpoint = model::Checkpoint<f32>;
pub type Utterance = data::Utterance<f32>;
