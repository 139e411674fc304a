use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};
use crate::tensor::{Tape, Tensor, Var};

use super::DiversityForm;

/// Norm guard used by the cosine similarity in the contrastive loss.
pub const COSINE_EPS: f64 = 1e-8;

/// Candidate sets for the contrastive loss.
///
/// `masked` lists the masked frame indices of one utterance. For each of
/// them, `k` distinct other masked frames are drawn uniformly without
/// replacement; the returned set starts with the frame itself. When fewer than
/// `k` other frames exist, `k` is reduced to `masked.len() - 1` and a warning
/// is logged. The effective `k` is returned alongside.
pub fn sample_distractors(masked: &[usize], k: usize, rng: &mut CounterRng) -> (Vec<Vec<usize>>, usize) {
    let m = masked.len();
    let eff = k.min(m.saturating_sub(1));
    if eff < k && m > 0 {
        log::warn!("only {m} masked frames; distractor count reduced from {k} to {eff}");
    }
    let sets = (0..m)
        .map(|i| {
            let mut set = Vec::with_capacity(eff + 1);
            set.push(masked[i]);
            // partial Fisher-Yates over the other positions
            let mut pool: Vec<usize> = (0..m).filter(|&j| j != i).collect();
            for s in 0..eff {
                let j = s + rng.below(pool.len() - s);
                pool.swap(s, j);
                set.push(masked[pool[s]]);
            }
            set
        })
        .collect();
    (sets, eff)
}

/// Sum over masked frames of `-log softmax_j(sim(cand_j, c_t) / kappa)[0]`,
/// with `c [T, d]`, `q [T, d]` and candidate sets from
/// [`sample_distractors`]. All sets must have equal size. Returns a scalar
/// var; divide by the number of sets for the mean.
pub fn contrastive_loss_sum<S: Scalar>(
    tape: &mut Tape<S>,
    c: Var,
    q: Var,
    candidates: &[Vec<usize>],
    kappa: f64,
) -> Result<Var> {
    if !(kappa > 0.0) {
        return Err(Error::invalid("contrastive_loss", format!("kappa must be positive, got {kappa}")));
    }
    if candidates.is_empty() {
        return Ok(tape.constant(Tensor::scalar(S::zero())));
    }
    let n = candidates[0].len();
    if n == 0 || candidates.iter().any(|s| s.len() != n) {
        return Err(Error::invalid("contrastive_loss", "candidate sets must be nonempty and equally sized"));
    }
    let m = candidates.len();
    let qi: Vec<usize> = candidates.iter().flatten().copied().collect();
    let ci: Vec<usize> = candidates.iter().flat_map(|s| std::iter::repeat_n(s[0], n)).collect();
    let qs = tape.gather_rows(q, &qi)?;
    let cs = tape.gather_rows(c, &ci)?;
    flag_small_norms(tape.value(qs), "quantized");
    flag_small_norms(tape.value(cs), "context");
    let sim = tape.cosine_similarity(qs, cs, 1, lit(COSINE_EPS))?;
    let sim = tape.reshape(sim, &[m, n])?;
    let logits = tape.scale(sim, lit(1.0 / kappa))?;
    let lp = tape.log_softmax(logits, 1)?;
    let pos = tape.slice(lp, 1, 0, 1)?;
    let total = tape.sum(pos, None)?;
    tape.scale(total, -S::one())
}

fn flag_small_norms<S: Scalar>(t: &Tensor<S>, what: &str) {
    let eps = COSINE_EPS;
    for r in 0..t.rows() {
        let n = t.row(r).iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        if n < eps {
            log::warn!("{what} vector with norm {n:e} in cosine similarity; clamped to {eps:e}");
            return;
        }
    }
}

/// Diversity penalty on the batch-average probabilities `pbar [G, V]` (a var
/// on the tape). [`DiversityForm::Paper`] gives
/// `(1/GV) Σ_g Σ_v p̄ log p̄`; [`DiversityForm::Reference`] gives
/// `(GV - Σ_g exp(-Σ_v p̄ log p̄)) / GV`.
pub fn diversity_loss_var<S: Scalar>(tape: &mut Tape<S>, pbar: Var, form: DiversityForm) -> Result<Var> {
    let s = tape.shape(pbar).to_vec();
    if s.len() != 2 {
        return Err(Error::shape("diversity_loss", &[&s]));
    }
    let gv = (s[0] * s[1]) as f64;
    let xl = tape.xlogx(pbar)?;
    match form {
        DiversityForm::Paper => {
            let t = tape.sum(xl, None)?;
            tape.scale(t, lit(1.0 / gv))
        }
        DiversityForm::Reference => {
            let neg_ent = tape.sum(xl, Some(1))?;
            let ent = tape.scale(neg_ent, -S::one())?;
            let ppl = tape.exp(ent)?;
            let total = tape.sum(ppl, None)?;
            let scaled = tape.scale(total, lit(-1.0 / gv))?;
            let one = tape.constant(Tensor::scalar(S::one()));
            tape.add(scaled, one)
        }
    }
}

/// Value of the diversity penalty for concrete probabilities. Rows must sum
/// to one within 1e-4.
pub fn diversity_loss<S: Scalar>(pbar: &Tensor<S>, form: DiversityForm) -> Result<f64> {
    if pbar.rank() != 2 {
        return Err(Error::shape("diversity_loss", &[pbar.shape()]));
    }
    for r in 0..pbar.rows() {
        let s: f64 = pbar.row(r).iter().map(|v| v.as_f64()).sum();
        if (s - 1.0).abs() > 1e-4 {
            return Err(Error::invalid("diversity_loss", format!("row {r} sums to {s}, expected 1")));
        }
    }
    let mut tape = Tape::new();
    let p = tape.constant(pbar.clone());
    let l = diversity_loss_var(&mut tape, p, form)?;
    Ok(tape.value(l).item().as_f64())
}

/// Summed per-group perplexity `Σ_g exp(-Σ_v p̄ log p̄)`; ranges over `[G, G·V]`.
pub fn code_perplexity<S: Scalar>(pbar: &Tensor<S>) -> f64 {
    (0..pbar.rows())
        .map(|g| {
            let h: f64 = pbar.row(g).iter().map(|v| v.as_f64()).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum();
            h.exp()
        })
        .sum()
}

/// `L = L_m + α·L_d`.
pub fn total_loss(l_m: f64, l_d: f64, alpha: f64) -> f64 {
    l_m + alpha * l_d
}
