//! CTC loss and decoders against brute-force enumeration, and error rates
//! against hand-computed edit distances.

use speechssl::decode::greedy_labels;
use speechssl::rng::CounterRng;

mod common;
use common::{beam_vs_brute_force, ctc_exhaustive, error_tables, log_softmax_rows, paths};

#[test]
fn ctc_matches_exhaustive_alignment_sum() {
    let cases = ctc_exhaustive().unwrap();
    assert_eq!(cases, 2950);
}

#[test]
fn exhaustive_beam_equals_brute_force_argmax() {
    assert!(beam_vs_brute_force(50).unwrap() >= 45);
}

#[test]
fn greedy_is_the_collapsed_best_path() {
    for seed in 0..50u64 {
        let mut rng = CounterRng::new(seed + 500);
        let t = 1 + rng.below(5);
        let lp = log_softmax_rows(t, 4, &mut rng);
        let best = paths(t, 4)
            .into_iter()
            .map(|(p, c)| (p.iter().enumerate().map(|(i, &k)| lp.data()[i * 4 + k]).sum::<f64>(), c))
            .max_by(|a, b| a.0.total_cmp(&b.0))
            .unwrap();
        assert_eq!(greedy_labels(&lp), best.1);
    }
}

#[test]
fn error_counts_match_hand_tables() {
    assert_eq!(error_tables().unwrap(), 20);
}
