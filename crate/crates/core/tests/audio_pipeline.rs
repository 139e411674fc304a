//! Data preparation on the synthetic corpus: bounds, SNR estimation and
//! reproducibility.

use speechssl::audio::{
    make_toy_corpus, prepare_data, toy_languages, Manifest, PrepareConfig, ToyCorpusConfig, WadaTable, TABLE_SAMPLES,
    TABLE_SEED,
};

mod common;
use common::{spearman, wada_sweep};

fn corpus(dir: &std::path::Path) -> usize {
    let cfg = ToyCorpusConfig { utterances: 6, multi: 1, noisy: 2, long: 1, seed: 3 };
    make_toy_corpus(dir, &toy_languages(), &cfg).unwrap()
}

#[test]
fn accepted_chunks_respect_duration_and_snr_bounds() {
    let input = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    let files = corpus(input.path());
    let cfg = PrepareConfig::default();
    let res = prepare_data(input.path(), out.path(), &cfg).unwrap();
    assert_eq!(res.report.files, files);
    // every noisy recording is rejected
    assert!(res.report.rejected_snr >= 3 * 2, "{:?}", res.report);
    let all: Vec<_> = res.train.records.iter().chain(&res.valid.records).collect();
    assert_eq!(all.len(), res.report.accepted);
    assert!(all.len() >= 3 * 6);
    for r in &all {
        let d = r.duration();
        assert!((1.0..=30.0).contains(&d), "{} lasts {d}", r.path);
        assert!(r.snr_db >= 25.0, "{} has snr {}", r.path, r.snr_db);
        assert!(out.path().join(&r.path).exists());
    }
    // the long recordings are split rather than dropped
    assert!(all.iter().any(|r| r.path.contains("long")));
    let reread = Manifest::read(&out.path().join("train.tsv")).unwrap();
    assert_eq!(reread.records.len(), res.train.records.len());
    for (a, b) in reread.records.iter().zip(&res.train.records) {
        assert_eq!((&a.path, a.num_samples, &a.transcript), (&b.path, b.num_samples, &b.transcript));
        assert!((a.snr_db - b.snr_db).abs() <= 0.005);
    }
}

#[test]
fn rerunning_gives_identical_manifests() {
    let input = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    corpus(input.path());
    let cfg = PrepareConfig::default();
    prepare_data(input.path(), out.path(), &cfg).unwrap();
    let first = std::fs::read(out.path().join("train.tsv")).unwrap();
    let first_valid = std::fs::read(out.path().join("valid.tsv")).unwrap();
    let chunk = std::fs::read(out.path().join("toy_a/utt0000_000.wav")).unwrap();
    prepare_data(input.path(), out.path(), &cfg).unwrap();
    assert_eq!(std::fs::read(out.path().join("train.tsv")).unwrap(), first);
    assert_eq!(std::fs::read(out.path().join("valid.tsv")).unwrap(), first_valid);
    assert_eq!(std::fs::read(out.path().join("toy_a/utt0000_000.wav")).unwrap(), chunk);
}

#[test]
fn wada_estimate_tracks_true_snr() {
    for seed in 0..3 {
        let (truth, est) = wada_sweep(seed);
        assert!(est.windows(2).all(|w| w[1] >= w[0]), "seed {seed}: {est:?}");
        assert!(spearman(&truth, &est) >= 0.99, "seed {seed}: {est:?}");
    }
}

#[test]
fn shipped_table_is_reproduced_by_the_generator() {
    let shipped = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/wada_table.tsv")).unwrap();
    assert_eq!(WadaTable::generate(TABLE_SAMPLES, TABLE_SEED).to_tsv(), shipped);
}
