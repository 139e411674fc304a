use crate::error::{Error, Result};
use crate::scalar::{lit, log_add_exp, Scalar};
use crate::tensor::{Tape, Tensor, Var};

/// Minimum number of frames that can emit `target`: one per label plus a
/// separating blank between equal neighbours.
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

/// CTC negative log-likelihood of `target` under per-frame log-probabilities
/// `log_probs [T, L]` (blank = 0), with its gradient with respect to
/// `log_probs`. Infeasible alignments give `+inf` and a zero gradient.
pub fn ctc_loss<S: Scalar>(log_probs: &Tensor<S>, target: &[usize]) -> Result<(f64, Vec<f64>)> {
    if log_probs.rank() != 2 {
        return Err(Error::shape("ctc_loss", &[log_probs.shape()]));
    }
    let (t_len, l) = (log_probs.rows(), log_probs.cols());
    if let Some(&bad) = target.iter().find(|&&k| k == 0 || k >= l) {
        return Err(Error::invalid("ctc_loss", format!("target label {bad} invalid for {l} outputs")));
    }
    if t_len < min_frames(target) || t_len == 0 {
        return Ok((f64::INFINITY, vec![0.0; t_len * l]));
    }
    let lp = |t: usize, k: usize| log_probs.data()[t * l + k].as_f64();
    // blank-interleaved target
    let ext: Vec<usize> = std::iter::once(0).chain(target.iter().flat_map(|&k| [k, 0])).collect();
    let s_len = ext.len();
    let ninf = f64::NEG_INFINITY;
    let skip_ok = |s: usize| s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2];
    let mut alpha = vec![ninf; t_len * s_len];
    alpha[0] = lp(0, ext[0]);
    if s_len > 1 {
        alpha[1] = lp(0, ext[1]);
    }
    for t in 1..t_len {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add_exp(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if skip_ok(s) {
                a = log_add_exp(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = a + lp(t, ext[s]);
        }
    }
    let mut beta = vec![ninf; t_len * s_len];
    let last = (t_len - 1) * s_len;
    beta[last + s_len - 1] = lp(t_len - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = lp(t_len - 1, ext[s_len - 2]);
    }
    for t in (0..t_len - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_add_exp(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && skip_ok(s + 2) {
                b = log_add_exp(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = b + lp(t, ext[s]);
        }
    }
    let end = alpha[last + s_len - 1];
    let log_p = if s_len > 1 { log_add_exp(end, alpha[last + s_len - 2]) } else { end };
    if !log_p.is_finite() {
        return Ok((f64::INFINITY, vec![0.0; t_len * l]));
    }
    let mut grad = vec![0.0; t_len * l];
    for t in 0..t_len {
        for s in 0..s_len {
            let ab = alpha[t * s_len + s] + beta[t * s_len + s];
            if ab > ninf {
                grad[t * l + ext[s]] -= (ab - lp(t, ext[s]) - log_p).exp();
            }
        }
    }
    Ok((-log_p, grad))
}

/// [`ctc_loss`] recorded on the tape. Infeasible targets are returned as
/// `None`.
pub fn ctc_loss_var<S: Scalar>(tape: &mut Tape<S>, log_probs: Var, target: &[usize]) -> Result<Option<Var>> {
    let (loss, grad) = ctc_loss(tape.value(log_probs), target)?;
    if !loss.is_finite() {
        return Ok(None);
    }
    let g = grad.into_iter().map(lit).collect();
    tape.scalar_with_grad(log_probs, lit(loss), g).map(Some)
}
