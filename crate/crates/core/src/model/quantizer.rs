use super::{linear, ModelConfig, SpeechModel};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};
use crate::tensor::{Bound, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct QuantizerOutput {
    /// Quantized vectors `[T, d]`.
    pub q: Var,
    /// Gumbel-softmax probabilities `[T, G, V]`.
    pub probs: Var,
    /// Selected entry per frame and group, row-major `[T, G]`.
    pub indices: Vec<usize>,
}

/// Product quantization of `z [T, d]`.
///
/// Per frame and group the probabilities are
/// `softmax((logits + n) / tau)` with Gumbel noise `n = -ln(-ln u)`; `noise`
/// set to `None` disables the noise. In hard mode the forward pass selects the
/// argmax entry while gradients flow through the soft probabilities
/// (straight-through); otherwise the probability-weighted mixture of entries
/// is used. The per-group entries are concatenated and linearly mapped to `q`.
pub fn quantize<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &ModelConfig,
    z: Var,
    tau: f64,
    noise: Option<&mut CounterRng>,
    hard: bool,
) -> Result<QuantizerOutput> {
    if !(tau > 0.0) {
        return Err(Error::invalid("quantize", format!("temperature must be positive, got {tau}")));
    }
    let t = tape.shape(z)[0];
    let (g, v) = (cfg.num_codebooks, cfg.entries_per_book);
    let logits = linear(tape, bound, z, "quantizer.logits")?;
    let mut logits = tape.reshape(logits, &[t * g, v])?;
    if let Some(rng) = noise {
        let n: Vec<S> = (0..t * g * v).map(|_| lit(rng.gumbel())).collect();
        let n = tape.constant(Tensor::new([t * g, v], n)?);
        logits = tape.add(logits, n)?;
    }
    let scaled = tape.scale(logits, lit(1.0 / tau))?;
    let probs = tape.softmax(scaled, 1)?;
    let indices: Vec<usize> = {
        let pv = tape.value(probs);
        (0..t * g)
            .map(|r| {
                let row = pv.row(r);
                (0..v).fold(0, |best, j| if row[j] > row[best] { j } else { best })
            })
            .collect()
    };
    let sel = if hard { tape.straight_through_onehot(probs)? } else { probs };
    let sel = tape.reshape(sel, &[t, g * v])?;
    let mut parts = Vec::with_capacity(g);
    for gi in 0..g {
        let s = tape.slice(sel, 1, gi * v, (gi + 1) * v)?;
        let book = bound.get(&format!("quantizer.codebook.{gi}"))?;
        parts.push(tape.matmul(s, book)?);
    }
    let e = if parts.len() == 1 { parts[0] } else { tape.concat(&parts, 1)? };
    let q = linear(tape, bound, e, "quantizer.combine")?;
    let probs = tape.reshape(probs, &[t, g, v])?;
    Ok(QuantizerOutput { q, probs, indices })
}

/// Noise-free hard codebook choices `[T, G]` for a waveform.
pub fn code_indices<S: Scalar>(model: &SpeechModel<S>, wave: &[S]) -> Result<Vec<usize>> {
    let mut tape = Tape::new();
    let b = tape.bind(&model.params, |_| false);
    let z = super::encode_features(&mut tape, &b, &model.config, wave)?;
    let out = quantize(&mut tape, &b, &model.config, z, 1.0, None, true)?;
    Ok(out.indices)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// One-group, two-entry quantizer whose logits equal its bias.
    fn fixed_logits(l: [f64; 2]) -> (ModelConfig, Tape<f64>, Bound, Var) {
        let mut cfg = ModelConfig::desk();
        cfg.model_dim = 4;
        cfg.num_heads = 1;
        cfg.num_codebooks = 1;
        cfg.entries_per_book = 2;
        let mut m = SpeechModel::<f64>::init(cfg.clone(), 0).unwrap();
        m.params.insert("quantizer.logits.weight", Tensor::zeros([4, 2]));
        m.params.insert("quantizer.logits.bias", Tensor::from_vec(l.to_vec()));
        let mut tape = Tape::new();
        let b = tape.bind(&m.params, |_| true);
        let z = tape.constant(Tensor::full([1, 4], 0.3));
        (cfg, tape, b, z)
    }

    fn probs_for(l: [f64; 2], tau: f64) -> Vec<f64> {
        let (cfg, mut tape, b, z) = fixed_logits(l);
        let out = quantize(&mut tape, &b, &cfg, z, tau, None, true).unwrap();
        tape.value(out.probs).data().to_vec()
    }

    #[test]
    fn noise_free_probabilities() {
        let p = probs_for([0.0, 0.0], 1.0);
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        let p = probs_for([3f64.ln(), 0.0], 1.0);
        assert!((p[0] - 0.75).abs() < 1e-12 && (p[1] - 0.25).abs() < 1e-12);
        let p = probs_for([3f64.ln(), 0.0], 0.5);
        assert!((p[0] - 0.9).abs() < 1e-12 && (p[1] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_temperature_rejected() {
        let (cfg, mut tape, b, z) = fixed_logits([0.0, 1.0]);
        assert!(quantize(&mut tape, &b, &cfg, z, 0.0, None, true).is_err());
    }

    #[test]
    fn probabilities_normalized_with_noise() {
        let cfg = ModelConfig::desk();
        let m = SpeechModel::<f32>::init(cfg.clone(), 5).unwrap();
        let mut tape = Tape::new();
        let b = tape.bind(&m.params, |_| false);
        let mut r = CounterRng::new(1);
        let z = tape.constant(Tensor::new([6, 64], (0..6 * 64).map(|_| r.normal() as f32).collect()).unwrap());
        let out = quantize(&mut tape, &b, &cfg, z, 0.7, Some(&mut r), true).unwrap();
        let p = tape.value(out.probs);
        assert_eq!(p.shape(), &[6, 2, 32]);
        for row in p.data().chunks(32) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&x| x >= 0.0));
        }
        assert_eq!(tape.value(out.q).shape(), &[6, 64]);
        assert_eq!(out.indices.len(), 12);
    }

    #[test]
    fn temperature_limits() {
        let hot = probs_for([2.0, -1.0], 1e4);
        assert!((hot[0] - 0.5).abs() < 1e-3);
        let cold = probs_for([2.0, -1.0], 1e-3);
        assert!(cold[0] > 1.0 - 1e-9);
    }

    #[test]
    fn straight_through_passes_gradient_to_logits() {
        let (cfg, mut tape, b, z) = fixed_logits([0.4, 0.1]);
        let out = quantize(&mut tape, &b, &cfg, z, 1.0, None, true).unwrap();
        let w = tape.constant(Tensor::from_vec(vec![1.0, -2.0, 0.5, 3.0]).reshape([1, 4]).unwrap());
        let prod = tape.mul(out.q, w).unwrap();
        let loss = tape.sum(prod, None).unwrap();
        let g = tape.backward(loss).unwrap();
        let gl = g.get(b.get("quantizer.logits.bias").unwrap()).unwrap();
        assert!(gl.data().iter().any(|&v| v.abs() > 1e-8));
    }
}
