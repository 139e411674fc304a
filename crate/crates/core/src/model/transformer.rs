use super::{layer_norm, linear, ModelConfig};
use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};
use crate::tensor::{Bound, Tape, Var};

/// Multi-head self-attention over `x [T, d]`. Returns the output projection
/// and the per-head attention probabilities `[T, T]`.
pub fn self_attention<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &ModelConfig,
    x: Var,
    prefix: &str,
    train: bool,
    rng: &mut CounterRng,
) -> Result<(Var, Vec<Var>)> {
    let q = linear(tape, bound, x, &format!("{prefix}.q"))?;
    let k = linear(tape, bound, x, &format!("{prefix}.k"))?;
    let v = linear(tape, bound, x, &format!("{prefix}.v"))?;
    let dh = cfg.head_dim();
    let scale: S = lit(1.0 / (dh as f64).sqrt());
    let mut heads = Vec::with_capacity(cfg.num_heads);
    let mut probs = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice(q, 1, lo, hi)?;
        let kh = tape.slice(k, 1, lo, hi)?;
        let vh = tape.slice(v, 1, lo, hi)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let p = tape.softmax(scores, 1)?;
        probs.push(p);
        let pd = tape.dropout(p, cfg.dropout, train, rng)?;
        heads.push(tape.matmul(pd, vh)?);
    }
    let cat = if heads.len() == 1 { heads[0] } else { tape.concat(&heads, 1)? };
    let out = linear(tape, bound, cat, &format!("{prefix}.o"))?;
    Ok((out, probs))
}

/// Pre-norm transformer stack over `x [T, d]`.
///
/// A convolutional positional embedding is added first and a final layer
/// norm closes the stack. With zero blocks the input is returned unchanged.
pub fn contextualize<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &ModelConfig,
    x: Var,
    train: bool,
    rng: &mut CounterRng,
) -> Result<Var> {
    let s = tape.shape(x);
    if s.len() != 2 || s[1] != cfg.model_dim {
        return Err(Error::shape("contextualize", &[s, &[s.first().copied().unwrap_or(0), cfg.model_dim]]));
    }
    if cfg.num_blocks == 0 {
        return Ok(x);
    }
    let xt = tape.transpose(x)?;
    let pw = bound.get("context.pos_conv.weight")?;
    let pb = bound.get("context.pos_conv.bias")?;
    let pos = tape.conv1d(xt, pw, Some(pb), 1, cfg.pos_conv_kernel / 2)?;
    let pos = tape.gelu(pos)?;
    let pos = tape.transpose(pos)?;
    let mut x = tape.add(x, pos)?;
    x = tape.dropout(x, cfg.dropout, train, rng)?;
    for i in 0..cfg.num_blocks {
        let p = format!("context.block.{i}");
        let h = layer_norm(tape, bound, x, &format!("{p}.ln1"))?;
        let (a, _) = self_attention(tape, bound, cfg, h, &format!("{p}.attn"), train, rng)?;
        let a = tape.dropout(a, cfg.dropout, train, rng)?;
        x = tape.add(x, a)?;
        let h = layer_norm(tape, bound, x, &format!("{p}.ln2"))?;
        let f = linear(tape, bound, h, &format!("{p}.ffn.fc1"))?;
        let f = tape.gelu(f)?;
        let f = linear(tape, bound, f, &format!("{p}.ffn.fc2"))?;
        let f = tape.dropout(f, cfg.dropout, train, rng)?;
        x = tape.add(x, f)?;
    }
    layer_norm(tape, bound, x, "context.final_ln")
}
