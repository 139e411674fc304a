use super::{layer_norm, linear, ModelConfig};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};
use crate::tensor::{Bound, Tape, Tensor, Var};

/// Raw waveform to latent frames `[T_latent, d]`.
///
/// Strided convolutions (no padding) with GELU; the first layer is followed by
/// per-channel group normalization. The final channels are layer-normalized
/// and projected to the model dimension.
pub fn encode_features<S: Scalar>(tape: &mut Tape<S>, bound: &Bound, cfg: &ModelConfig, wave: &[S]) -> Result<Var> {
    let need = cfg.min_samples();
    if wave.len() < need {
        return Err(Error::TooShort { op: "encode_features", needed: need, got: wave.len() });
    }
    let mut x = tape.constant(Tensor::new([1, wave.len()], wave.to_vec())?);
    for (i, layer) in cfg.conv_spec.iter().enumerate() {
        let w = bound.get(&format!("encoder.conv.{i}.weight"))?;
        let b = bound.get(&format!("encoder.conv.{i}.bias"))?;
        x = tape.conv1d(x, w, Some(b), layer.stride, 0)?;
        if i == 0 {
            let g = bound.get("encoder.norm0.gamma")?;
            let bt = bound.get("encoder.norm0.beta")?;
            x = tape.group_norm(x, layer.channels, g, bt, lit(1e-5))?;
        }
        x = tape.gelu(x)?;
    }
    let x = tape.transpose(x)?;
    let x = layer_norm(tape, bound, x, "encoder.ln")?;
    linear(tape, bound, x, "encoder.proj")
}
