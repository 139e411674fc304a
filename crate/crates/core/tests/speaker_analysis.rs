//! Voice embeddings, speaker clustering, the gender classifier, and the
//! codebook-usage analysis (k-means, PCA, report files).

use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;
use speechssl::analysis::{cluster_languages, emit_report, kmeans, pca_2d, LanguageUsage};
use speechssl::audio::{synth_utterance, toy_languages};
use speechssl::rng::CounterRng;
use speechssl::speaker::{cluster_assignments, cosine, embed_voice, estimate_speaker_count, train_gender_svm, SvmConfig};

fn orthonormal(n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = CounterRng::new(seed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    basis
}

fn rotate(m: &[Vec<f64>], x: &[f32]) -> Vec<f32> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * *b as f64).sum::<f64>() as f32).collect()
}

fn planted_voices(n: usize, dim: usize, seed: u64) -> (Vec<Vec<f32>>, Vec<&'static str>) {
    let mut r = CounterRng::new(seed);
    let centre: Vec<f64> = (0..dim).map(|_| r.normal()).collect();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..n {
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        xs.push(centre.iter().map(|c| (0.5 * sign * c + 0.6 * r.normal()) as f32).collect());
        ys.push(if sign > 0.0 { "female" } else { "male" });
    }
    (xs, ys)
}

#[test]
fn gender_decisions_are_rotation_invariant() {
    let dim = 12;
    let (xs, ys) = planted_voices(60, dim, 4);
    let rot = orthonormal(dim, 9);
    let rx: Vec<Vec<f32>> = xs.iter().map(|x| rotate(&rot, x)).collect();
    let cfg = SvmConfig { epochs: 30, ..SvmConfig::default() };
    let refs: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
    let rrefs: Vec<&[f32]> = rx.iter().map(Vec::as_slice).collect();
    let a = train_gender_svm(&refs, &ys, &cfg).unwrap();
    let b = train_gender_svm(&rrefs, &ys, &cfg).unwrap();
    assert!(a.train_accuracy > 0.9, "{}", a.train_accuracy);
    let (test, _) = planted_voices(20, dim, 77);
    for x in &test {
        let (da, db) = (a.decision(x), b.decision(&rotate(&rot, x)));
        assert!((da - db).abs() < 1e-3 * da.abs().max(1.0), "{da} vs {db}");
        if da.abs() > 1e-3 {
            assert_eq!(a.predict(x), b.predict(&rotate(&rot, x)));
        }
    }
    assert!(a.objective.last().unwrap() <= &a.objective[0]);
}

#[test]
fn cluster_count_shrinks_as_the_cut_grows() {
    for seed in 0..10 {
        let mut r = CounterRng::new(seed);
        let embs: Vec<Vec<f32>> = (0..15).map(|_| (0..8).map(|_| r.normal() as f32).collect()).collect();
        let refs: Vec<&[f32]> = embs.iter().map(Vec::as_slice).collect();
        let mut prev = usize::MAX;
        for i in 0..=20 {
            let cut = i as f64 * 0.1;
            let labels = cluster_assignments(&refs, cut);
            let n = labels.iter().max().map_or(0, |m| m + 1);
            assert!(n <= prev, "seed {seed} cut {cut}: {n} > {prev}");
            prev = n;
        }
        assert_eq!(prev, 1);
    }
}

#[test]
fn voices_of_different_pitch_form_separate_clusters() {
    let langs = toy_languages();
    let mut ids = Vec::new();
    let mut embs = Vec::new();
    for lang in &langs[..2] {
        let mut r = CounterRng::new(11).fork(lang.pitch_hz as u64);
        for i in 0..4 {
            let text = lang.sentence(&mut r);
            let w = synth_utterance(lang, &text, 0.001, 0.05, &mut r).unwrap();
            let e = embed_voice(&format!("{}/{i}", lang.name), &w).unwrap();
            let loud: Vec<f32> = w.iter().map(|x| 2.0 * x).collect();
            assert!(1.0 - cosine(&e.vector, &embed_voice("loud", &loud).unwrap().vector) < 0.01);
            ids.push(e.id.clone());
            embs.push(e.vector);
        }
    }
    let refs: Vec<&[f32]> = embs.iter().map(Vec::as_slice).collect();
    let c = estimate_speaker_count("toy", &ids, &refs, 0.07);
    assert_eq!(c.n_clusters, 2, "{:?}", c.assignments);
    let first: Vec<usize> = ids[..4].iter().map(|i| c.assignments[i]).collect();
    let second: Vec<usize> = ids[4..].iter().map(|i| c.assignments[i]).collect();
    assert!(first.iter().all(|&a| a == first[0]) && second.iter().all(|&a| a == second[0]));
    assert_ne!(first[0], second[0]);
}

#[test]
fn pca_matches_reference_eigensolver() {
    let mut r = CounterRng::new(5);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..5).map(|_| r.normal()).collect()).collect();
    let p = pca_2d(&rows).unwrap();
    let n = rows.len();
    let mean: Vec<f64> = (0..5).map(|j| rows.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let x = DMatrix::from_fn(n, 5, |i, j| rows[i][j] - mean[j]);
    let cov = x.transpose() * &x / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..5).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().sum();
    for (c, &k) in order[..2].iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let dot: f64 = (0..5).map(|j| v[j] * p.components[c][j]).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-6, "component {c}");
        assert!((p.explained_ratio[c] - eig.eigenvalues[k] / total).abs() < 1e-6);
        for i in 0..n {
            let proj: f64 = (0..5).map(|j| x[(i, j)] * v[j]).sum::<f64>() * dot.signum();
            assert!((p.coords[i][c] - proj).abs() < 1e-6);
        }
    }
}

fn planted_usage(groups: usize, per_group: usize, dim: usize, seed: u64) -> (Vec<LanguageUsage>, Vec<usize>) {
    let mut r = CounterRng::new(seed);
    let centres: Vec<Vec<f64>> = (0..groups).map(|_| (0..dim).map(|_| r.uniform()).collect()).collect();
    let mut out = Vec::new();
    let mut truth = Vec::new();
    for i in 0..groups * per_group {
        let g = i % groups;
        let v: Vec<f64> = centres[g].iter().map(|c| c + 0.01 * r.normal()).collect();
        out.push(LanguageUsage { language: format!("lang{i:02}"), utterances: 1, frames: 1, vector: v });
        truth.push(g);
    }
    (out, truth)
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

#[test]
fn kmeans_recovers_planted_groups_and_ignores_order() {
    for seed in 0..5 {
        let (usage, truth) = planted_usage(3, 4, 20, seed);
        let report = cluster_languages(&usage, 3, seed).unwrap();
        assert!(same_partition(&report.assignments, &truth));
        let mut perm: Vec<usize> = (0..usage.len()).collect();
        CounterRng::new(seed + 100).shuffle(&mut perm);
        let shuffled: Vec<LanguageUsage> = perm.iter().map(|&i| usage[i].clone()).collect();
        let r2 = cluster_languages(&shuffled, 3, seed).unwrap();
        let back: Vec<usize> = {
            let mut v = vec![0; perm.len()];
            for (pos, &i) in perm.iter().enumerate() {
                v[i] = r2.assignments[pos];
            }
            v
        };
        assert!(same_partition(&back, &report.assignments));
    }
    let flat: Vec<Vec<f64>> = vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![0.1, 0.0], vec![10.1, 0.0]];
    let km = kmeans(&flat, 2, 0).unwrap();
    assert!(same_partition(&km.assignments, &[0, 1, 0, 1]));
}

#[test]
fn report_files_are_well_formed() {
    let (usage, _) = planted_usage(2, 3, 10, 1);
    let report = cluster_languages(&usage, 2, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    emit_report(&report, None, dir.path()).unwrap();
    let svg = std::fs::read_to_string(dir.path().join("clusters.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let circles: Vec<_> = doc.descendants().filter(|n| n.has_tag_name("circle")).collect();
    assert_eq!(circles.len(), usage.len());
    for c in &circles {
        let cx: f64 = c.attribute("cx").unwrap().parse().unwrap();
        assert!((0.0..=640.0).contains(&cx));
        assert!(c.attribute("class").unwrap().starts_with("cluster-"));
    }
    let mut rd = csv::Reader::from_path(dir.path().join("clusters.csv")).unwrap();
    assert_eq!(rd.headers().unwrap(), vec!["language", "cluster", "pc1", "pc2"]);
    let rows: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), usage.len());
    for row in &rows {
        assert!(row[1].parse::<usize>().unwrap() < 2);
        assert!(row[2].parse::<f64>().unwrap().is_finite());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pca_never_stretches_distances(n in 3usize..9, dim in 1usize..12, seed in any::<u64>()) {
        let mut r = CounterRng::new(seed);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| r.normal()).collect()).collect();
        let p = pca_2d(&rows).unwrap();
        for i in 0..n {
            for j in 0..n {
                let orig = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                let proj = ((p.coords[i][0] - p.coords[j][0]).powi(2) + (p.coords[i][1] - p.coords[j][1]).powi(2)).sqrt();
                prop_assert!(proj <= orig + 1e-8);
            }
        }
    }
}

