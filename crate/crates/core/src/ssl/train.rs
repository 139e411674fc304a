use std::fs::OpenOptions;
use std::path::Path;

use super::{code_perplexity, contrastive_loss_sum, diversity_loss_var, sample_distractors, LossBreakdown, SslConfig};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{apply_mask, contextualize, encode_features, linear, mask_timesteps, quantize, MaskSpec, ModelConfig, SpeechModel};
use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};
use crate::tensor::{AdamState, Bound, Tape, Var};

/// Per-utterance pieces of the pretraining objective.
#[derive(Debug, Clone, Copy)]
pub struct SslTerms {
    /// Summed contrastive loss over masked frames (scalar).
    pub lm_sum: Var,
    pub num_masked: usize,
    /// Summed soft codebook probabilities over masked frames, `[G, V]`.
    pub pbar_sum: Option<Var>,
    pub frames: usize,
}

/// Forward pass of the pretraining objective for one utterance.
///
/// Latents are masked according to `mask` and contextualized; the context is
/// projected and compared against quantizations of the unmasked latents at
/// the masked positions.
#[allow(clippy::too_many_arguments)]
pub fn ssl_forward<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    cfg: &ModelConfig,
    ssl: &SslConfig,
    wave: &[S],
    mask: &MaskSpec,
    distractor_rng: &mut CounterRng,
    tau: f64,
    noise: Option<&mut CounterRng>,
    hard: bool,
    train: bool,
    dropout_rng: &mut CounterRng,
) -> Result<SslTerms> {
    let z = encode_features(tape, bound, cfg, wave)?;
    let t = tape.shape(z)[0];
    if mask.len() != t {
        return Err(Error::invalid("ssl_forward", format!("mask covers {} frames, latents have {t}", mask.len())));
    }
    let x = if mask.count() > 0 { apply_mask(tape, bound, cfg, z, mask)? } else { z };
    let c = contextualize(tape, bound, cfg, x, train, dropout_rng)?;
    let c = linear(tape, bound, c, "ssl.final_proj")?;
    let qo = quantize(tape, bound, cfg, z, tau, noise, hard)?;
    let masked = mask.indices();
    let (sets, _) = sample_distractors(&masked, ssl.num_distractors, distractor_rng);
    let lm_sum = contrastive_loss_sum(tape, c, qo.q, &sets, ssl.kappa)?;
    let pbar_sum = if masked.is_empty() {
        None
    } else {
        let (g, v) = (cfg.num_codebooks, cfg.entries_per_book);
        let flat = tape.reshape(qo.probs, &[t, g * v])?;
        let rows = tape.gather_rows(flat, &masked)?;
        let s = tape.sum(rows, Some(0))?;
        Some(tape.reshape(s, &[g, v])?)
    };
    Ok(SslTerms { lm_sum, num_masked: masked.len(), pbar_sum, frames: t })
}

/// Frame-weighted batch losses `(L, L_m, L_d, p̄)` from per-utterance terms.
pub(crate) fn combine_terms<S: Scalar>(
    tape: &mut Tape<S>,
    terms: &[SslTerms],
    ssl: &SslConfig,
) -> Result<Option<(Var, Var, Var, Var)>> {
    let m: usize = terms.iter().map(|t| t.num_masked).sum();
    if m == 0 {
        return Ok(None);
    }
    let sums: Vec<Var> = terms.iter().map(|t| t.lm_sum).collect();
    let pbars: Vec<Var> = terms.iter().filter_map(|t| t.pbar_sum).collect();
    let mut lm = sums[0];
    for &s in &sums[1..] {
        lm = tape.add(lm, s)?;
    }
    let lm = tape.scale(lm, lit(1.0 / m as f64))?;
    let mut pbar = pbars[0];
    for &p in &pbars[1..] {
        pbar = tape.add(pbar, p)?;
    }
    let pbar = tape.scale(pbar, lit(1.0 / m as f64))?;
    let ld = diversity_loss_var(tape, pbar, ssl.diversity_form)?;
    let weighted = tape.scale(ld, lit(ssl.alpha))?;
    let l = tape.add(lm, weighted)?;
    Ok(Some((l, lm, ld, pbar)))
}

/// Random window of at most `limit` samples.
pub fn crop<'a, S>(wave: &'a [S], limit: usize, rng: &mut CounterRng) -> &'a [S] {
    if wave.len() <= limit {
        return wave;
    }
    let start = rng.below(wave.len() - limit + 1);
    &wave[start..start + limit]
}

/// One optimizer update on a batch of waveforms.
///
/// All randomness (masking, distractors, Gumbel noise, dropout) derives
/// from `seed`; the Gumbel temperature follows the optimizer step count.
pub fn pretrain_step<S: Scalar>(
    model: &mut SpeechModel<S>,
    opt: &mut AdamState<S>,
    batch: &[&[S]],
    ssl: &SslConfig,
    seed: u64,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::invalid("pretrain_step", "empty batch"));
    }
    let cfg = model.config.clone();
    let root = CounterRng::new(seed);
    let mut crop_rng = root.fork(1);
    let mut mask_rng = root.fork(2);
    let mut dis_rng = root.fork(3);
    let mut noise_rng = root.fork(4);
    let mut drop_rng = root.fork(5);
    let tau = cfg.gumbel.at(opt.step);
    let mut tape = Tape::new();
    let bound = tape.bind(&model.params, |_| true);
    let mut terms = Vec::with_capacity(batch.len());
    for wave in batch {
        let w = crop(wave, ssl.crop_limit, &mut crop_rng);
        let t = cfg
            .latent_len(w.len())
            .ok_or(Error::TooShort { op: "pretrain_step", needed: cfg.min_samples(), got: w.len() })?;
        let mask = mask_timesteps(t, cfg.mask_prob, cfg.mask_span_len, &mut mask_rng);
        terms.push(ssl_forward(
            &mut tape,
            &bound,
            &cfg,
            ssl,
            w,
            &mask,
            &mut dis_rng,
            tau,
            Some(&mut noise_rng),
            true,
            true,
            &mut drop_rng,
        )?);
    }
    let Some((l, lm, ld, pbar)) = combine_terms(&mut tape, &terms, ssl)? else {
        log::warn!("batch has no masked frames; update skipped");
        return Ok(LossBreakdown {
            l_m: 0.0,
            l_d: 0.0,
            l: 0.0,
            kappa: ssl.kappa,
            alpha: ssl.alpha,
            num_masked: 0,
            code_ppl: 0.0,
            lr: opt.current_lr(),
            tau,
        });
    };
    let (lv, lmv, ldv) = (tape.value(l).item(), tape.value(lm).item().as_f64(), tape.value(ld).item().as_f64());
    let code_ppl = code_perplexity(tape.value(pbar));
    if !lv.is_finite() {
        return Err(Error::Numeric(format!(
            "pretraining loss is not finite at step {}: L={} L_m={lmv} L_d={ldv} tau={tau}",
            opt.step,
            lv.as_f64()
        )));
    }
    let grads = tape.backward(l)?.collect(&bound, &model.params, |_| true);
    let lr = opt.step(&mut model.params, &grads, |_| true)?;
    Ok(LossBreakdown {
        l_m: lmv,
        l_d: ldv,
        l: lv.as_f64(),
        kappa: ssl.kappa,
        alpha: ssl.alpha,
        num_masked: terms.iter().map(|t| t.num_masked).sum(),
        code_ppl,
        lr,
        tau,
    })
}

/// CSV log `step,loss,l_m,l_d,lr,ppl_codebook`.
pub struct TrainLog {
    writer: csv::Writer<std::fs::File>,
}

impl TrainLog {
    /// Starts a new log, replacing any existing file.
    pub fn create(path: &Path) -> Result<Self> {
        std::fs::File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        Self::open(path)
    }

    /// Appends to an existing log (for resumed runs) or starts a new one.
    pub fn open(path: &Path) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        let mut writer = csv::Writer::from_writer(file);
        if fresh {
            writer
                .write_record(["step", "loss", "l_m", "l_d", "lr", "ppl_codebook"])
                .map_err(|e| Error::Data(e.to_string()))?;
        }
        Ok(Self { writer })
    }

    pub fn record(&mut self, step: u64, b: &LossBreakdown) -> Result<()> {
        let row = [
            step.to_string(),
            b.l.to_string(),
            b.l_m.to_string(),
            b.l_d.to_string(),
            b.lr.to_string(),
            b.code_ppl.to_string(),
        ];
        self.writer.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
        self.writer.flush().map_err(|e| Error::io("flushing training log", e))
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PretrainConfig {
    pub ssl: SslConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { ssl: SslConfig::desk(), batch_size: 4, steps: 200, seed: 0 }
    }
}

/// Runs `cfg.steps` updates over shuffled mini-batches of `corpus`.
/// Utterances too short for the encoder are skipped with a warning.
pub fn pretrain<S: Scalar>(
    model: &mut SpeechModel<S>,
    opt: &mut AdamState<S>,
    corpus: &[Utterance<S>],
    cfg: &PretrainConfig,
    mut log: Option<&mut TrainLog>,
) -> Result<Vec<LossBreakdown>> {
    let need = model.config.min_samples();
    let usable: Vec<&Utterance<S>> = corpus.iter().filter(|u| u.samples.len() >= need).collect();
    if usable.len() < corpus.len() {
        log::warn!("skipping {} utterances shorter than {need} samples", corpus.len() - usable.len());
    }
    if usable.is_empty() {
        return Err(Error::Data("no usable pretraining utterances".into()));
    }
    let bs = cfg.batch_size.clamp(1, usable.len());
    let root = CounterRng::new(cfg.seed).fork(0x5511);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0u64;
    let mut out = Vec::with_capacity(cfg.steps as usize);
    for _ in 0..cfg.steps {
        if cursor + bs > order.len() {
            order = (0..usable.len()).collect();
            root.fork(epoch).shuffle(&mut order);
            epoch += 1;
            cursor = 0;
        }
        let batch: Vec<&[S]> = order[cursor..cursor + bs].iter().map(|&i| usable[i].samples.as_slice()).collect();
        cursor += bs;
        let seed = root.fork(1 << 40 | opt.step).next_raw();
        let b = pretrain_step(model, opt, &batch, &cfg.ssl, seed)?;
        if let Some(log) = log.as_deref_mut() {
            log.record(opt.step, &b)?;
        }
        log::debug!("step {} L={:.4} L_m={:.4} L_d={:.5} ppl={:.1}", opt.step, b.l, b.l_m, b.l_d, b.code_ppl);
        out.push(b);
    }
    Ok(out)
}
