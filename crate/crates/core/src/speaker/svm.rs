use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self { lambda: 1e-3, epochs: 50, seed: 0 }
    }
}

/// Linear max-margin binary classifier. `labels[1]` is the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderModel {
    pub weight: Vec<f32>,
    pub bias: f32,
    pub labels: [String; 2],
    pub train_accuracy: f64,
    /// Regularized hinge objective after each epoch.
    pub objective: Vec<f64>,
}

impl GenderModel {
    pub fn decision(&self, x: &[f32]) -> f64 {
        self.weight.iter().zip(x).map(|(w, v)| *w as f64 * *v as f64).sum::<f64>() + self.bias as f64
    }

    pub fn predict(&self, x: &[f32]) -> &str {
        &self.labels[usize::from(self.decision(x) >= 0.0)]
    }
}

/// λ/2 ‖w‖² + mean hinge loss; the bias is treated as an extra weight on
/// a constant unit feature.
fn objective(w: &[f64], xs: &[Vec<f64>], ys: &[f64], lambda: f64) -> f64 {
    let reg = 0.5 * lambda * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (1.0 - y * x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).max(0.0))
        .sum();
    reg + hinge / xs.len() as f64
}

/// Stochastic subgradient descent (step 1/(λt)) on the regularized hinge
/// loss with seeded shuffling each epoch. The returned weights are the
/// average of the iterates of the final epoch.
pub fn train_gender_svm(embeddings: &[&[f32]], labels: &[&str], cfg: &SvmConfig) -> Result<GenderModel> {
    if embeddings.len() != labels.len() || embeddings.is_empty() {
        return Err(Error::invalid("train_gender_svm", "need one label per embedding"));
    }
    let mut classes: Vec<&str> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() != 2 {
        return Err(Error::invalid("train_gender_svm", format!("need exactly two classes, got {}", classes.len())));
    }
    for c in &classes {
        if labels.iter().filter(|l| *l == c).count() < 2 {
            return Err(Error::invalid("train_gender_svm", format!("class `{c}` has fewer than two examples")));
        }
    }
    if !(cfg.lambda > 0.0) || cfg.epochs == 0 {
        return Err(Error::invalid("train_gender_svm", "lambda must be positive and epochs nonzero"));
    }
    let dim = embeddings[0].len();
    let xs: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.iter().map(|&v| v as f64).chain(std::iter::once(1.0)).collect())
        .collect();
    if xs.iter().any(|x| x.len() != dim + 1) {
        return Err(Error::invalid("train_gender_svm", "embeddings differ in length"));
    }
    let ys: Vec<f64> = labels.iter().map(|l| if *l == classes[1] { 1.0 } else { -1.0 }).collect();
    let mut w = vec![0.0; dim + 1];
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut rng = CounterRng::new(cfg.seed);
    let mut t = 0usize;
    let mut avg = vec![0.0; dim + 1];
    let mut obj = Vec::with_capacity(cfg.epochs);
    let radius = 1.0 / cfg.lambda.sqrt();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        avg.iter_mut().for_each(|v| *v = 0.0);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let margin = ys[i] * xs[i].iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            w.iter_mut().for_each(|v| *v *= 1.0 - eta * cfg.lambda);
            if margin < 1.0 {
                w.iter_mut().zip(&xs[i]).for_each(|(v, x)| *v += eta * ys[i] * x);
            }
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > radius {
                w.iter_mut().for_each(|v| *v *= radius / norm);
            }
            avg.iter_mut().zip(&w).for_each(|(a, v)| *a += v / order.len() as f64);
        }
        obj.push(objective(&avg, &xs, &ys, cfg.lambda));
    }
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, y)| *y * x.iter().zip(&avg).map(|(a, b)| a * b).sum::<f64>() > 0.0)
        .count();
    Ok(GenderModel {
        weight: avg[..dim].iter().map(|&v| v as f32).collect(),
        bias: avg[dim] as f32,
        labels: [classes[0].to_string(), classes[1].to_string()],
        train_accuracy: correct as f64 / xs.len() as f64,
        objective: obj,
    })
}
