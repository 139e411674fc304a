use super::linalg::symmetric_eigen;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    /// Two coordinates per input vector.
    pub coords: Vec<[f64; 2]>,
    /// Unit principal directions in the input space.
    pub components: [Vec<f64>; 2],
    pub explained_ratio: [f64; 2],
    pub mean: Vec<f64>,
}

/// Projection onto the top two principal components of the mean-centred
/// data. The eigenproblem is solved on the `n × n` Gram matrix, which
/// shares its nonzero spectrum with the covariance and stays small when
/// there are few vectors of high dimension. Each component is signed so
/// that its largest-magnitude loading is positive.
pub fn pca_2d(vectors: &[Vec<f64>]) -> Result<Pca> {
    let n = vectors.len();
    if n < 3 {
        return Err(Error::TooShort { op: "pca_2d", needed: 3, got: n });
    }
    let dim = vectors[0].len();
    if vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::invalid("pca_2d", "vectors differ in length"));
    }
    let mean: Vec<f64> = (0..dim).map(|d| vectors.iter().map(|v| v[d]).sum::<f64>() / n as f64).collect();
    let xc: Vec<Vec<f64>> = vectors.iter().map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect()).collect();
    let denom = (n - 1) as f64;
    let gram: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| xc[i].iter().zip(&xc[j]).map(|(a, b)| a * b).sum::<f64>() / denom).collect())
        .collect();
    let total: f64 = (0..n).map(|i| gram[i][i]).sum();
    let (vals, vecs) = symmetric_eigen(&gram);
    let mut components = [vec![0.0; dim], vec![0.0; dim]];
    let mut explained_ratio = [0.0; 2];
    if total <= 1e-300 {
        log::warn!("pca_2d: all vectors are identical; coordinates are zero");
    } else {
        let tol = 1e-12 * vals[0].abs().max(f64::MIN_POSITIVE);
        for c in 0..2 {
            if vals[c] <= tol {
                continue;
            }
            let mut w: Vec<f64> = (0..dim).map(|d| (0..n).map(|i| xc[i][d] * vecs[c][i]).sum()).collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            w.iter_mut().for_each(|x| *x /= norm);
            let lead = w.iter().cloned().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if lead < 0.0 {
                w.iter_mut().for_each(|x| *x = -*x);
            }
            if c == 1 {
                // re-orthogonalize against the first direction
                let dot: f64 = w.iter().zip(&components[0]).map(|(a, b)| a * b).sum();
                w.iter_mut().zip(&components[0]).for_each(|(a, b)| *a -= dot * b);
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                w.iter_mut().for_each(|x| *x /= norm);
            }
            components[c] = w;
            explained_ratio[c] = (vals[c] / total).clamp(0.0, 1.0);
        }
    }
    let coords = xc
        .iter()
        .map(|x| {
            let p = |w: &[f64]| x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
            [p(&components[0]), p(&components[1])]
        })
        .collect();
    Ok(Pca { coords, components, explained_ratio, mean })
}
