use serde::{Deserialize, Serialize};

use super::{ctc_loss_var, feature_mask_augment, AugmentConfig, Vocabulary};
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::model::{contextualize, encode_features, linear, SpeechModel, HEAD_WEIGHT};
use crate::rng::CounterRng;
use crate::scalar::{lit, Scalar};
use crate::tensor::{AdamState, Bound, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub augment: AugmentConfig,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    /// Updates during which only the output layer is trained.
    pub freeze_steps: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self { augment: AugmentConfig::default(), batch_size: 4, steps: 300, seed: 0, freeze_steps: 0 }
    }
}

/// Parameters updated at optimizer step `step`: the output layer always,
/// the context network once `step >= freeze_steps`. The feature encoder and
/// quantizer never are.
pub fn finetune_trainable(name: &str, step: u64, freeze_steps: u64) -> bool {
    name.starts_with("asr.head.") || (step >= freeze_steps && name.starts_with("context."))
}

/// Per-frame label log-probabilities `[T, L]` on the tape.
pub fn head_log_probs<S: Scalar>(
    tape: &mut Tape<S>,
    bound: &Bound,
    model: &SpeechModel<S>,
    wave: &[S],
    aug: &AugmentConfig,
    train: bool,
    rng: &mut CounterRng,
) -> Result<Var> {
    let cfg = &model.config;
    let z = encode_features(tape, bound, cfg, wave)?;
    let mut aug_rng = rng.fork(1);
    let z = feature_mask_augment(tape, z, aug, train, &mut aug_rng)?;
    let c = contextualize(tape, bound, cfg, z, train, rng)?;
    let logits = linear(tape, bound, c, "asr.head")?;
    tape.log_softmax(logits, 1)
}

/// Inference log-probabilities for one waveform.
pub fn emissions<S: Scalar>(model: &SpeechModel<S>, wave: &[S]) -> Result<Tensor<S>> {
    if model.ctc_labels().is_none() {
        return Err(Error::Checkpoint("model has no CTC output layer".into()));
    }
    let mut tape = Tape::new();
    let bound = tape.bind(&model.params, |_| false);
    let lp = head_log_probs(&mut tape, &bound, model, wave, &AugmentConfig::off(), false, &mut CounterRng::new(0))?;
    Ok(tape.value(lp).clone())
}

/// One update on `(waveform, label sequence)` pairs; returns the mean CTC
/// loss over feasible utterances. Infeasible ones are skipped with a warning.
pub fn finetune_step<S: Scalar>(
    model: &mut SpeechModel<S>,
    opt: &mut AdamState<S>,
    batch: &[(&[S], &[usize])],
    cfg: &FinetuneConfig,
    seed: u64,
) -> Result<f64> {
    let labels = model.ctc_labels().ok_or_else(|| Error::Checkpoint("model has no CTC output layer".into()))?;
    if let Some(&bad) = batch.iter().flat_map(|(_, t)| t.iter()).find(|&&k| k == 0 || k >= labels) {
        return Err(Error::invalid("finetune_step", format!("label {bad} does not fit a head with {labels} outputs")));
    }
    let step = opt.step;
    let trainable = |n: &str| finetune_trainable(n, step, cfg.freeze_steps);
    let mut tape = Tape::new();
    let bound = tape.bind(&model.params, trainable);
    let root = CounterRng::new(seed);
    let mut losses = Vec::new();
    for (i, (wave, target)) in batch.iter().enumerate() {
        let mut rng = root.fork(i as u64);
        let lp = head_log_probs(&mut tape, &bound, model, wave, &cfg.augment, true, &mut rng)?;
        match ctc_loss_var(&mut tape, lp, target)? {
            Some(l) => losses.push(l),
            None => log::warn!("utterance {i} of the batch is too short for its transcript; skipped"),
        }
    }
    if losses.is_empty() {
        log::warn!("no feasible utterances in batch; update skipped");
        return Ok(f64::INFINITY);
    }
    let n = losses.len();
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = tape.add(total, l)?;
    }
    let mean = tape.scale(total, lit(1.0 / n as f64))?;
    let value = tape.value(mean).item().as_f64();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("CTC loss is not finite at step {step}")));
    }
    let grads = tape.backward(mean)?.collect(&bound, &model.params, trainable);
    opt.step(&mut model.params, &grads, trainable)?;
    Ok(value)
}

/// Finetunes on transcribed utterances, adding an output layer sized to
/// `vocab` when the model has none. Returns the per-step losses.
pub fn finetune<S: Scalar>(
    model: &mut SpeechModel<S>,
    opt: &mut AdamState<S>,
    corpus: &[Utterance<S>],
    vocab: &Vocabulary,
    cfg: &FinetuneConfig,
) -> Result<Vec<f64>> {
    match model.ctc_labels() {
        None => model.add_ctc_head(vocab.len(), cfg.seed),
        Some(l) if l != vocab.len() => {
            return Err(Error::Checkpoint(format!("output layer has {l} labels, vocabulary has {}", vocab.len())))
        }
        _ => {}
    }
    let mut items: Vec<(&[S], Vec<usize>)> = Vec::new();
    for u in corpus {
        let Some(text) = &u.transcript else { continue };
        let target = vocab.encode(text)?;
        if target.is_empty() {
            continue;
        }
        items.push((u.samples.as_slice(), target));
    }
    if items.is_empty() {
        return Err(Error::Data("no transcribed utterances to finetune on".into()));
    }
    let bs = cfg.batch_size.clamp(1, items.len());
    let root = CounterRng::new(cfg.seed).fork(0xF17E);
    let (mut order, mut cursor, mut epoch) = (Vec::new(), 0usize, 0u64);
    let mut out = Vec::new();
    for _ in 0..cfg.steps {
        if cursor + bs > order.len() {
            order = (0..items.len()).collect();
            root.fork(epoch).shuffle(&mut order);
            epoch += 1;
            cursor = 0;
        }
        let batch: Vec<(&[S], &[usize])> =
            order[cursor..cursor + bs].iter().map(|&i| (items[i].0, items[i].1.as_slice())).collect();
        cursor += bs;
        let seed = root.fork(1 << 40 | opt.step).next_raw();
        let l = finetune_step(model, opt, &batch, cfg, seed)?;
        log::debug!("finetune step {} ctc={l:.4}", opt.step);
        out.push(l);
    }
    debug_assert!(model.params.get(HEAD_WEIGHT).is_some());
    Ok(out)
}
