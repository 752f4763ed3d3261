//! Mini-batch Adam loop shared by every model family.

use std::ops::{AddAssign, Div};

use serde::{Deserialize, Serialize};

use crate::dataset::WindowSample;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, Parameters, ParamsExt, Rng};

/// Per-sample (or averaged) loss terms. Inactive terms stay at zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub kl: f64,
    pub recon: f64,
    pub pred: f64,
    pub codebook: f64,
    pub commitment: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.total, self.kl, self.recon, self.pred, self.codebook, self.commitment]
            .iter()
            .all(|v| v.is_finite())
    }
}

impl AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.total += o.total;
        self.kl += o.kl;
        self.recon += o.recon;
        self.pred += o.pred;
        self.codebook += o.codebook;
        self.commitment += o.commitment;
    }
}

impl Div<f64> for LossBreakdown {
    type Output = Self;
    fn div(self, d: f64) -> Self {
        Self {
            total: self.total / d,
            kl: self.kl / d,
            recon: self.recon / d,
            pred: self.pred / d,
            codebook: self.codebook / d,
            commitment: self.commitment / d,
        }
    }
}

/// Half the squared error; its gradient with respect to `pred` is `pred - target`.
pub(crate) fn half_sq_error(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let grad: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    (0.5 * grad.iter().map(|g| g * g).sum::<f64>(), grad)
}

/// A model trainable on [`WindowSample`]s.
pub trait Objective: Parameters + Clone {
    /// Loss of one sample. With `noise`, stochastic terms are sampled from it;
    /// without, they take their deterministic value. When `grads` is given,
    /// the gradient of `total` is added into it.
    fn sample_loss(
        &self,
        sample: &WindowSample,
        noise: Option<&mut Rng>,
        grads: Option<&mut Self>,
    ) -> Result<LossBreakdown>;

    /// Same shapes, all parameters zero.
    fn zeros_like(&self) -> Self;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch: 128,
            lr: 5e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<M> {
    /// Parameters after the epoch with the lowest validation total.
    pub best: M,
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub history: Vec<EpochRecord>,
}

/// Mean deterministic loss over `samples`.
pub fn mean_loss<M: Objective>(model: &M, samples: &[WindowSample]) -> Result<LossBreakdown> {
    let mut acc = LossBreakdown::default();
    for s in samples {
        acc += model.sample_loss(s, None, None)?;
    }
    Ok(acc / samples.len().max(1) as f64)
}

/// Shuffled mini-batch Adam. Each epoch reshuffles with a stream derived from
/// `cfg.seed`; stochastic loss terms draw from a second stream.
pub fn train<M: Objective>(
    model: M,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<M>> {
    if cfg.epochs > 0 && (train_set.is_empty() || val_set.is_empty()) {
        return Err(Error::Invalid(format!(
            "training needs non-empty splits (train {}, val {})",
            train_set.len(),
            val_set.len()
        )));
    }
    if cfg.batch == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Invalid("batch must be >= 1 and lr > 0".into()));
    }
    let root = Rng::new(cfg.seed);
    let mut order_rng = root.derive(0);
    let mut noise_rng = root.derive(1);
    let mut adam = AdamState::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &model,
    );

    let mut model = model;
    let mut best = model.clone();
    let mut best_epoch = None;
    let mut best_val_loss = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut grads = model.zeros_like();

    for epoch in 0..cfg.epochs {
        order_rng.shuffle(&mut order);
        let mut epoch_loss = LossBreakdown::default();
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            grads.set_zero();
            let mut batch_loss = LossBreakdown::default();
            for &i in chunk {
                batch_loss += model.sample_loss(&train_set[i], Some(&mut noise_rng), Some(&mut grads))?;
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("loss at epoch {epoch}, batch {b}")));
            }
            grads.scale(1.0 / chunk.len() as f64);
            adam.step(&mut model, &grads)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch}, batch {b}: {e}")))?;
            epoch_loss += batch_loss;
        }
        let train_mean = epoch_loss / train_set.len() as f64;
        let val = mean_loss(&model, val_set)?;
        if !val.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        log::info!(
            "epoch {epoch}: train {:.6} val {:.6}",
            train_mean.total,
            val.total
        );
        if val.total < best_val_loss {
            best_val_loss = val.total;
            best_epoch = Some(epoch);
            best = model.clone();
        }
        history.push(EpochRecord {
            epoch,
            train: train_mean,
            val,
        });
    }
    let best_val_loss = match best_epoch {
        Some(_) => Some(best_val_loss),
        None if val_set.is_empty() => None,
        None => Some(mean_loss(&best, val_set)?.total),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        best_val_loss,
        history,
    })
}
