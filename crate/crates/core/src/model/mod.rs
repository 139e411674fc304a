//! Convolutional feature encoder, time masking, transformer context network
//! and product quantizer with Gumbel-softmax codebook selection.

mod checkpoint;
mod config;
mod encoder;
mod mask;
mod quantizer;
mod transformer;

pub use checkpoint::{expected_shapes, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_VERSION};
pub use config::{ConvLayer, GumbelSchedule, ModelConfig};
pub use encoder::encode_features;
pub use mask::{apply_mask, mask_timesteps, MaskSpec};
pub use quantizer::{code_indices, quantize, QuantizerOutput};
pub use transformer::{contextualize, self_attention};

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};
use crate::tensor::{Bound, ParamStore, Tape, Tensor, Var};

/// Parameter-name prefix of the frozen-during-finetuning feature encoder.
pub const ENCODER_PREFIX: &str = "encoder.";
pub const QUANTIZER_PREFIX: &str = "quantizer.";

/// A network configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechModel<S> {
    pub config: ModelConfig,
    pub params: ParamStore<S>,
}

impl<S: Scalar> SpeechModel<S> {
    /// Fresh parameters: fan-in scaled uniform weights, zero biases, unit
    /// norm gains, codebooks and mask embedding uniform in [-1, 1).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let errs = config.validate();
        if !errs.is_empty() {
            return Err(Error::Config(errs));
        }
        let mut rng = CounterRng::new(seed).fork(0x1417);
        let mut params = ParamStore::new();
        for (name, shape) in expected_shapes(&config, None) {
            let t = init_tensor(&name, &shape, &mut rng);
            params.insert(name, t);
        }
        Ok(Self { config, params })
    }

    /// Adds a freshly initialized CTC output layer with `labels` outputs
    /// (blank included), replacing any existing head.
    pub fn add_ctc_head(&mut self, labels: usize, seed: u64) {
        let mut rng = CounterRng::new(seed).fork(0xC7C);
        let d = self.config.model_dim;
        let bound = 0.01;
        let w = (0..d * labels).map(|_| lit::<S>((rng.uniform() * 2.0 - 1.0) * bound)).collect();
        self.params.insert(HEAD_WEIGHT, Tensor::new([d, labels], w).expect("shape"));
        self.params.insert(HEAD_BIAS, Tensor::zeros([labels]));
    }

    pub fn ctc_labels(&self) -> Option<usize> {
        self.params.get(HEAD_BIAS).map(|t| t.numel())
    }

    pub fn cast<T: Scalar>(&self) -> SpeechModel<T> {
        SpeechModel { config: self.config.clone(), params: self.params.cast() }
    }
}

pub const HEAD_WEIGHT: &str = "asr.head.weight";
pub const HEAD_BIAS: &str = "asr.head.bias";

fn init_tensor<S: Scalar>(name: &str, shape: &[usize], rng: &mut CounterRng) -> Tensor<S> {
    let n: usize = shape.iter().product();
    let fill = |rng: &mut CounterRng, lo: f64, hi: f64| -> Vec<S> {
        (0..n).map(|_| lit(lo + (hi - lo) * rng.uniform())).collect()
    };
    let data = if name.ends_with(".gamma") {
        vec![S::one(); n]
    } else if name.ends_with(".beta") || name.ends_with(".bias") {
        vec![S::zero(); n]
    } else if name.starts_with("quantizer.codebook") || name == "mask_emb" {
        fill(rng, -1.0, 1.0)
    } else {
        // weights are [fan_in, fan_out] for linear layers and [out, in, k] for convs
        let fan_in = if shape.len() == 3 { shape[1] * shape[2] } else { shape[0] };
        let b = 1.0 / (fan_in.max(1) as f64).sqrt();
        fill(rng, -b, b)
    };
    Tensor::new(shape.to_vec(), data).expect("shape")
}

/// `x · w + b` for `x [n, in]`, `w [in, out]`, `b [out]`.
pub(crate) fn linear<S: Scalar>(tape: &mut Tape<S>, bound: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let w = bound.get(&format!("{prefix}.weight"))?;
    let b = bound.get(&format!("{prefix}.bias"))?;
    let y = tape.matmul(x, w)?;
    let n = tape.shape(b)[0];
    let b2 = tape.reshape(b, &[1, n])?;
    tape.add(y, b2)
}

pub(crate) fn layer_norm<S: Scalar>(tape: &mut Tape<S>, bound: &Bound, x: Var, prefix: &str) -> Result<Var> {
    let g = bound.get(&format!("{prefix}.gamma"))?;
    let b = bound.get(&format!("{prefix}.beta"))?;
    tape.layer_norm(x, g, b, lit(1e-5))
}

/// Result of a full pretraining-style forward pass over one utterance.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// Latents `[T, d]`.
    pub latents: Var,
    /// Context representations `[T, d]`.
    pub context: Var,
}

/// Feature encoding followed by (optional) masking and the context network.
pub fn forward_context<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &ModelConfig,
    wave: &[S],
    mask: Option<&MaskSpec>,
    train: bool,
    rng: &mut CounterRng,
) -> Result<ForwardVars> {
    let latents = encode_features(tape, bound, cfg, wave)?;
    let input = match mask {
        Some(m) if m.count() > 0 => apply_mask(tape, bound, cfg, latents, m)?,
        _ => latents,
    };
    let context = contextualize(tape, bound, cfg, input, train, rng)?;
    Ok(ForwardVars { latents, context })
}

/// Inference-only context representations for a waveform.
pub fn infer_context<S: Scalar>(model: &SpeechModel<S>, wave: &[S]) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let bound = tape.bind(&model.params, |_| false);
    let mut rng = CounterRng::new(0);
    let out = forward_context(&mut tape, &bound, &model.config, wave, None, false, &mut rng)?;
    Ok(tape.value(out.context).clone())
}
