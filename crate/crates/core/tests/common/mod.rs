//! Oracles shared by the topic test files and the acceptance target.
#![allow(dead_code)]

use speechssl::asr::{ctc_loss, ctc_loss_var, head_log_probs, AugmentConfig, Vocabulary};
use speechssl::audio::{synth_utterance, toy_languages, wada_snr};
use speechssl::decode::{beam_search_decode, char_errors, word_errors, BeamConfig};
use speechssl::model::{ConvLayer, MaskSpec, ModelConfig, SpeechModel};
use speechssl::rng::CounterRng;
use speechssl::ssl::{diversity_loss_var, ssl_forward, DiversityForm, SslConfig};
use speechssl::tensor::gradcheck::{check_gradients, GradReport};
use speechssl::tensor::{Bound, Tape, Tensor, Var};
use speechssl::Result;

pub const GRAD_TOL: f64 = 1e-3;
pub const GRAD_H: f64 = 1e-5;
const ABS_FLOOR: f64 = 1e-7;

/// Relative agreement, or absolute agreement for gradients that vanish.
pub fn agrees(r: &GradReport) -> bool {
    r.rel_err < GRAD_TOL || r.abs_err < ABS_FLOOR
}

pub fn toy_model(conv_spec: Vec<ConvLayer>, seed: u64) -> SpeechModel<f64> {
    let mut c = ModelConfig::desk();
    c.conv_spec = conv_spec;
    c.model_dim = 8;
    c.num_blocks = 1;
    c.num_heads = 2;
    c.ffn_dim = 16;
    c.dropout = 0.0;
    c.num_codebooks = 2;
    c.entries_per_book = 4;
    c.pos_conv_kernel = 3;
    c.learned_mask_emb = true;
    SpeechModel::init(c, seed).unwrap()
}

/// Gradient reports for the pretraining objective (contrastive plus
/// weighted diversity loss) on a 2-frame, d=8, G=2, V=4 toy with soft
/// quantization and fixed Gumbel noise.
pub fn ssl_toy_reports(seed: u64) -> Vec<GradReport> {
    // 10 samples -> 4 -> 2 frames
    let model = toy_model(vec![ConvLayer::new(8, 4, 2), ConvLayer::new(8, 2, 2)], seed);
    let mut rng = CounterRng::new(seed + 50);
    let wave: Vec<f64> = (0..10).map(|_| rng.normal()).collect();
    let ssl = SslConfig { num_distractors: 1, ..SslConfig::desk() };
    let mask = MaskSpec::from_flags(vec![true, true]);
    let cfg = model.config.clone();
    let loss = |tape: &mut Tape<f64>, b: &Bound| -> Result<Var> {
        let mut dr = CounterRng::new(1);
        let mut noise = CounterRng::new(2);
        let mut drop = CounterRng::new(3);
        let terms = ssl_forward(tape, b, &cfg, &ssl, &wave, &mask, &mut dr, 1.5, Some(&mut noise), false, false, &mut drop)?;
        let m = terms.num_masked as f64;
        let lm = tape.scale(terms.lm_sum, 1.0 / m)?;
        let pbar = tape.scale(terms.pbar_sum.expect("masked frames"), 1.0 / m)?;
        let ld = diversity_loss_var(tape, pbar, DiversityForm::Paper)?;
        let ld = tape.scale(ld, ssl.alpha)?;
        tape.add(lm, ld)
    };
    check_gradients(&model.params, |_| true, loss, GRAD_H, 24).unwrap()
}

/// Gradient reports for the CTC loss of the output layer and context
/// network on a 3-frame toy.
pub fn ctc_toy_reports(seed: u64) -> Vec<GradReport> {
    // 14 samples -> 6 -> 3 frames
    let mut model = toy_model(vec![ConvLayer::new(8, 4, 2), ConvLayer::new(8, 2, 2)], seed);
    model.add_ctc_head(4, seed);
    let mut rng = CounterRng::new(seed + 70);
    let wave: Vec<f64> = (0..14).map(|_| rng.normal()).collect();
    let aug = AugmentConfig::off();
    let target = [2usize, 3];
    check_gradients(
        &model.params,
        |n| n.starts_with("asr.") || n.starts_with("context."),
        |tape, b| {
            let mut r = CounterRng::new(0);
            let lp = head_log_probs(tape, b, &model, &wave, &aug, false, &mut r)?;
            Ok(ctc_loss_var(tape, lp, &target)?.expect("feasible target"))
        },
        GRAD_H,
        24,
    )
    .unwrap()
}

pub fn log_softmax_rows(t: usize, l: usize, rng: &mut CounterRng) -> Tensor<f64> {
    let mut data = Vec::with_capacity(t * l);
    for _ in 0..t {
        let row: Vec<f64> = (0..l).map(|_| 1.5 * rng.normal()).collect();
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        data.extend(row.iter().map(|x| x - lse));
    }
    Tensor::new([t, l], data).unwrap()
}

/// Every frame-level path as (labels, collapsed sequence).
pub fn paths(t: usize, l: usize) -> Vec<(Vec<usize>, Vec<usize>)> {
    let total = l.pow(t as u32);
    (0..total)
        .map(|mut code| {
            let mut p = Vec::with_capacity(t);
            for _ in 0..t {
                p.push(code % l);
                code /= l;
            }
            let mut out = Vec::new();
            let mut prev = usize::MAX;
            for &k in &p {
                if k != prev && k != 0 {
                    out.push(k);
                }
                prev = k;
            }
            (p, out)
        })
        .collect()
}

pub fn targets(l: usize, max_len: usize) -> Vec<Vec<usize>> {
    let mut all = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for f in &frontier {
            for k in 1..l {
                let mut v: Vec<usize> = f.clone();
                v.push(k);
                next.push(v);
            }
        }
        all.extend(next.iter().cloned());
        frontier = next;
    }
    all
}

/// Compares the DP loss and gradient with enumeration over every frame
/// path for all T <= 5, |V| <= 3, |target| <= 3, ten random emission matrices
/// each. Returns the case count.
pub fn ctc_exhaustive() -> std::result::Result<usize, String> {
    let mut cases = 0;
    for t in 1..=5 {
        for l in 2..=4 {
            let all = paths(t, l);
            for (ti, target) in targets(l, 3).into_iter().enumerate() {
              for draw in 0..10u64 {
                let mut rng = CounterRng::new((t * 100 + l * 10) as u64 ^ (ti as u64) << 20 ^ draw << 40);
                let lp = log_softmax_rows(t, l, &mut rng);
                let mut total = 0.0;
                let mut occupancy = vec![0.0; t * l];
                for (p, collapsed) in &all {
                    if *collapsed != target {
                        continue;
                    }
                    let prob: f64 = p.iter().enumerate().map(|(i, &k)| lp.data()[i * l + k]).sum::<f64>().exp();
                    total += prob;
                    for (i, &k) in p.iter().enumerate() {
                        occupancy[i * l + k] += prob;
                    }
                }
                let (loss, grad) = ctc_loss(&lp, &target).unwrap();
                if total == 0.0 {
                    if !loss.is_infinite() || grad.iter().any(|&g| g != 0.0) {
                        return Err(format!("T={t} L={l} {target:?}: infeasible case gave {loss}"));
                    }
                } else {
                    let want = -total.ln();
                    if (loss - want).abs() > 1e-9 * want.abs().max(1.0) {
                        return Err(format!("T={t} L={l} {target:?}: {loss} vs {want}"));
                    }
                    // d(-ln P)/d lp[t,k] is minus the posterior occupancy
                    for (g, o) in grad.iter().zip(&occupancy) {
                        if (g + o / total).abs() > 1e-9 {
                            return Err(format!("gradient T={t} L={l} {target:?}"));
                        }
                    }
                }
                cases += 1;
              }
            }
        }
    }
    Ok(cases)
}

pub fn marginals(lp: &Tensor<f64>) -> Vec<(Vec<usize>, f64)> {
    let (t, l) = (lp.rows(), lp.cols());
    let mut acc: std::collections::BTreeMap<Vec<usize>, f64> = Default::default();
    for (p, collapsed) in paths(t, l) {
        let prob: f64 = p.iter().enumerate().map(|(i, &k)| lp.data()[i * l + k]).sum::<f64>().exp();
        *acc.entry(collapsed).or_default() += prob;
    }
    acc.into_iter().collect()
}

/// Beam search (beam larger than the search space, no LM) against the
/// brute-force most probable label sequence on `n` random emission
/// matrices with T <= 4. Returns how many had a unique argmax.
pub fn beam_vs_brute_force(n: u64) -> std::result::Result<usize, String> {
    let vocab = Vocabulary::from_symbols(["<blank>", "|", "a", "b"].map(String::from).to_vec()).unwrap();
    let cfg = BeamConfig { beam: 1000, lm_weight: 0.0, word_bonus: 0.0, nbest: 1 };
    let mut unique = 0;
    for seed in 0..n {
        let mut rng = CounterRng::new(seed);
        let t = 1 + rng.below(4);
        let lp = log_softmax_rows(t, 4, &mut rng);
        let mut m = marginals(&lp);
        m.sort_by(|a, b| b.1.total_cmp(&a.1));
        let res = beam_search_decode(&lp, &vocab, None, &cfg).map_err(|e| e.to_string())?;
        if (res.best.acoustic - m[0].1.ln()).abs() > 1e-9 {
            return Err(format!("seed {seed}: score {} vs {}", res.best.acoustic, m[0].1.ln()));
        }
        if m.len() == 1 || m[0].1 - m[1].1 > 1e-12 {
            if res.best.labels != m[0].0 {
                return Err(format!("seed {seed}: {:?} vs {:?}", res.best.labels, m[0].0));
            }
            unique += 1;
        }
    }
    Ok(unique)
}

/// Reference, hypothesis, edit count, reference length.
pub const WORD_TABLE: [(&str, &str, usize, usize); 12] = [
    ("a b c", "a b c", 0, 3),
    ("a b c", "a x c", 1, 3),
    ("a b c", "a c", 1, 3),
    ("a b c", "a b c d", 1, 3),
    ("the cat sat", "cat sat the", 2, 3),
    ("one two three four", "", 4, 4),
    ("a", "b c d", 3, 1),
    ("hello world", "  hello   world ", 0, 2),
    ("x y z w", "y z w x", 2, 4),
    ("a a a", "a a", 1, 3),
    ("kitten sat on mat", "sitting sat in the mat", 3, 4),
    ("a b c d e", "e d c b a", 4, 5),
];

pub const CHAR_TABLE: [(&str, &str, usize, usize); 8] = [
    ("kitten", "sitting", 3, 6),
    ("abc", "abc", 0, 3),
    ("abc", "", 3, 3),
    ("ab cd", "abcd", 0, 4),
    ("flaw", "lawn", 2, 4),
    ("intention", "execution", 5, 9),
    ("aaaa", "aa", 2, 4),
    ("sunday", "saturday", 3, 6),
];

/// Checks both tables; returns the number of pairs.
pub fn error_tables() -> std::result::Result<usize, String> {
    for (r, h, edits, n) in WORD_TABLE {
        let c = word_errors(r, h);
        if (c.edits, c.reference_len) != (edits, n) {
            return Err(format!("WER {r:?} / {h:?}: {c:?}"));
        }
    }
    for (r, h, edits, n) in CHAR_TABLE {
        let c = char_errors(r, h);
        if (c.edits, c.reference_len) != (edits, n) {
            return Err(format!("CER {r:?} / {h:?}: {c:?}"));
        }
    }
    Ok(WORD_TABLE.len() + CHAR_TABLE.len())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        for k in i..=j {
            r[idx[k]] = (i + j) as f64 / 2.0;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

/// WADA estimates of a toy utterance mixed with white noise at -10..40 dB
/// in 5 dB steps: (true SNRs, estimates).
pub fn wada_sweep(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let lang = &toy_languages()[0];
    let mut rng = CounterRng::new(seed);
    let text = lang.sentence(&mut rng);
    let clean = synth_utterance(lang, &text, 0.0, 0.0, &mut rng).unwrap();
    let power = clean.iter().map(|&x| (x as f64).powi(2)).sum::<f64>() / clean.len() as f64;
    let noise: Vec<f64> = (0..clean.len()).map(|_| rng.normal()).collect();
    let truth: Vec<f64> = (0..=10).map(|i| -10.0 + 5.0 * i as f64).collect();
    let est = truth
        .iter()
        .map(|&snr| {
            let sigma = (power / 10f64.powf(snr / 10.0)).sqrt();
            let mix: Vec<f32> = clean.iter().zip(&noise).map(|(&s, &n)| s + (sigma * n) as f32).collect();
            wada_snr(&mix)
        })
        .collect();
    (truth, est)
}
