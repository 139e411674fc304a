use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::embed::cosine;

/// Result of agglomerative clustering for one source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerClusters {
    pub source: String,
    pub n_clusters: usize,
    /// Utterance id to cluster index; clusters are numbered by first
    /// appearance in input order.
    pub assignments: BTreeMap<String, usize>,
}

/// Average-linkage agglomerative clustering on cosine distance. Merging
/// stops once the closest pair of clusters is farther apart than `cut`;
/// equal distances merge the lowest index pair first. Returns one cluster
/// index per input.
pub fn cluster_assignments(embeddings: &[&[f32]], cut: f64) -> Vec<usize> {
    let n = embeddings.len();
    if n == 0 {
        return Vec::new();
    }
    let mut dist = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = 1.0 - cosine(embeddings[i], embeddings[j]);
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut size = vec![1usize; n];
    let mut alive = vec![true; n];
    let mut owner: Vec<usize> = (0..n).collect();
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            for j in i + 1..n {
                if alive[j] && best.is_none_or(|b| dist[i][j] < b.0) {
                    best = Some((dist[i][j], i, j));
                }
            }
        }
        let Some((d, a, b)) = best else { break };
        if d > cut {
            break;
        }
        for k in 0..n {
            if alive[k] && k != a && k != b {
                let merged = (size[a] as f64 * dist[a][k] + size[b] as f64 * dist[b][k]) / (size[a] + size[b]) as f64;
                dist[a][k] = merged;
                dist[k][a] = merged;
            }
        }
        size[a] += size[b];
        alive[b] = false;
        owner.iter_mut().filter(|o| **o == b).for_each(|o| *o = a);
    }
    let mut relabel = BTreeMap::new();
    owner
        .iter()
        .map(|o| {
            let next = relabel.len();
            *relabel.entry(*o).or_insert(next)
        })
        .collect()
}

pub fn estimate_speaker_count(source: &str, ids: &[String], embeddings: &[&[f32]], cut: f64) -> SpeakerClusters {
    let a = cluster_assignments(embeddings, cut);
    SpeakerClusters {
        source: source.to_string(),
        n_clusters: a.iter().max().map_or(0, |m| m + 1),
        assignments: ids.iter().cloned().zip(a).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(angle: f64) -> Vec<f32> {
        vec![angle.cos() as f32, angle.sin() as f32]
    }

    #[test]
    fn single_and_degenerate() {
        let e = unit(0.0);
        assert_eq!(cluster_assignments(&[&e], 0.3), vec![0]);
        assert!(cluster_assignments(&[], 0.3).is_empty());
    }

    #[test]
    fn two_groups() {
        // within-group cosine distance < 0.1, across > 0.6
        let pts: Vec<Vec<f32>> = [0.0, 0.2, 0.35, 1.5, 1.6, 1.8].iter().map(|a| unit(*a)).collect();
        let refs: Vec<&[f32]> = pts.iter().map(|v| v.as_slice()).collect();
        assert_eq!(cluster_assignments(&refs, 0.3), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(cluster_assignments(&refs, 2.0), vec![0; 6]);
        let c = estimate_speaker_count("src", &(0..6).map(|i| i.to_string()).collect::<Vec<_>>(), &refs, 0.3);
        assert_eq!(c.n_clusters, 2);
    }
}
