use crate::error::{Error, Result};
use crate::rng::CounterRng;

const MAX_ITERS: usize = 300;
const SHIFT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations until the largest
/// centroid shift drops below 1e-8 or 300 iterations. Empty clusters keep
/// their previous centroid.
pub fn kmeans(vectors: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans> {
    let n = vectors.len();
    if k == 0 || k > n {
        return Err(Error::invalid("kmeans", format!("k = {k} with {n} vectors")));
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("kmeans", "vectors differ in length"));
    }
    let mut rng = CounterRng::new(seed);
    let mut centroids = vec![vectors[rng.below(n)].clone()];
    while centroids.len() < k {
        let d: Vec<f64> = vectors.iter().map(|v| nearest(v, &centroids).1).collect();
        let total: f64 = d.iter().sum();
        let pick = if total <= 0.0 {
            // all remaining points coincide with a centroid
            (0..n).find(|i| !centroids.contains(&vectors[*i])).unwrap_or(0)
        } else {
            let mut u = rng.uniform() * total;
            let mut idx = n - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    idx = i;
                    break;
                }
                u -= di;
            }
            idx
        };
        centroids.push(vectors[pick].clone());
    }
    let mut assignments = vec![0; n];
    let mut iterations = 0;
    for it in 1..=MAX_ITERS {
        iterations = it;
        for (a, v) in assignments.iter_mut().zip(vectors) {
            *a = nearest(v, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (a, v) in assignments.iter().zip(vectors) {
            counts[*a] += 1;
            sums[*a].iter_mut().zip(v).for_each(|(s, x)| *s += x);
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            shift = shift.max(sq_dist(&new, &centroids[c]).sqrt());
            centroids[c] = new;
        }
        if shift < SHIFT_TOL {
            break;
        }
    }
    for (a, v) in assignments.iter_mut().zip(vectors) {
        *a = nearest(v, &centroids).0;
    }
    let inertia = assignments.iter().zip(vectors).map(|(a, v)| sq_dist(v, &centroids[*a])).sum();
    Ok(KMeans { assignments, centroids, inertia, iterations })
}
