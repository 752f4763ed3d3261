use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmConfig {
    pub c: f64,
    pub epochs: usize,
    /// Initial step size of the `eta0 / (1 + lambda * eta0 * t)` schedule.
    pub eta0: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            epochs: 200,
            eta0: 0.1,
        }
    }
}

/// Linear one-vs-rest soft-margin SVM over standardized features.
/// For two classes a single hyperplane is trained and class 1 scores `+s`,
/// class 0 scores `-s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub num_classes: usize,
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub c: f64,
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

fn standardize(x: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    x.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s).collect()
}

/// Primal subgradient descent on `sum_i hinge_i + ||w||^2 / (2C)`, sample
/// order reshuffled every epoch. Returns the average of the iterates visited
/// during the second half of the epochs.
fn fit_binary(x: &[Vec<f64>], y: &[f64], cfg: &SvmConfig, rng: &mut Rng) -> (Vec<f64>, f64) {
    let m = x.len();
    let f = x[0].len();
    let lambda = 1.0 / (cfg.c * m as f64);
    let mut w = vec![0.0; f];
    let mut b = 0.0;
    let mut w_avg = vec![0.0; f];
    let mut b_avg = 0.0;
    let mut averaged = 0.0;
    let mut order: Vec<usize> = (0..m).collect();
    let mut t = 0.0;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let average = 2 * epoch >= cfg.epochs;
        for &i in &order {
            let eta = cfg.eta0 / (1.0 + lambda * cfg.eta0 * t);
            t += 1.0;
            let xi = &x[i];
            let score: f64 = w.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() + b;
            let shrink = 1.0 - eta * lambda;
            if y[i] * score < 1.0 {
                for (wj, xj) in w.iter_mut().zip(xi) {
                    *wj = *wj * shrink + eta * y[i] * xj;
                }
                b += eta * y[i];
            } else {
                w.iter_mut().for_each(|wj| *wj *= shrink);
            }
            if average {
                averaged += 1.0;
                let r = 1.0 / averaged;
                w_avg.iter_mut().zip(&w).for_each(|(a, v)| *a += (v - *a) * r);
                b_avg += (b - b_avg) * r;
            }
        }
    }
    if averaged == 0.0 {
        return (w, b);
    }
    (w_avg, b_avg)
}

pub fn fit_svm(features: &[Vec<f64>], labels: &[usize], cfg: &SvmConfig, seed: u64) -> Result<SvmModel> {
    if features.len() != labels.len() {
        return Err(Error::dim("svm labels", features.len(), labels.len()));
    }
    if features.len() < 2 {
        return Err(Error::Invalid("svm needs at least 2 samples".into()));
    }
    if !(cfg.c > 0.0) {
        return Err(Error::Invalid("svm C must be positive".into()));
    }
    let f = features[0].len();
    if let Some(i) = features.iter().position(|r| r.len() != f) {
        return Err(Error::dim(format!("svm feature row {i}"), f, features[i].len()));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::Invalid(format!("svm training labels contain a single class ({first})")));
    }

    let m = features.len() as f64;
    let mut mean = vec![0.0; f];
    for r in features {
        for (a, v) in mean.iter_mut().zip(r) {
            *a += v / m;
        }
    }
    let mut std = vec![0.0; f];
    for r in features {
        for ((s, v), mu) in std.iter_mut().zip(r).zip(&mean) {
            *s += (v - mu) * (v - mu) / m;
        }
    }
    for s in &mut std {
        *s = s.sqrt().max(1e-12);
    }
    let x: Vec<Vec<f64>> = features.iter().map(|r| standardize(r, &mean, &std)).collect();

    let root = Rng::new(seed);
    let mut weights = Vec::new();
    let mut bias = Vec::new();
    if num_classes == 2 {
        let y: Vec<f64> = labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect();
        let (w, b) = fit_binary(&x, &y, cfg, &mut root.derive(0));
        weights.push(w.iter().map(|v| -v).collect());
        bias.push(-b);
        weights.push(w);
        bias.push(b);
    } else {
        for k in 0..num_classes {
            let y: Vec<f64> = labels.iter().map(|&l| if l == k { 1.0 } else { -1.0 }).collect();
            let (w, b) = fit_binary(&x, &y, cfg, &mut root.derive(k as u64));
            weights.push(w);
            bias.push(b);
        }
    }
    Ok(SvmModel {
        num_classes,
        weights,
        bias,
        c: cfg.c,
        feature_mean: mean,
        feature_std: std,
    })
}

impl SvmModel {
    pub fn scores(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.feature_mean.len() {
            return Err(Error::dim("svm features", self.feature_mean.len(), z.len()));
        }
        let x = standardize(z, &self.feature_mean, &self.feature_std);
        Ok(self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| w.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>() + b)
            .collect())
    }

    pub fn classify(&self, z: &[f64]) -> Result<usize> {
        Ok(argmax(&self.scores(z)?))
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}
