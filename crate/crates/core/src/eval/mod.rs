//! Interaction inference on latent features (linear SVM + F1), forward
//! prediction RMSE, and PCA projection for visualization.

mod export;
mod metrics;
mod pca;
mod svm;

pub use export::{confusion_csv, scatter_svg, write_scatter_csv, ScatterPoint};
pub use metrics::{confusion_matrix, f1_score, rmse, Averaging};
pub use pca::{covariance, pca_fit, PcaModel};
pub use svm::{argmax, fit_svm, SvmConfig, SvmModel};

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{NormStats, WindowSample};
use crate::error::{Error, Result};
use crate::lstm::LstmModel;
use crate::vae::{Mode, VaeModel};
use crate::vqvae::VqVaeModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Cutting,
    Material,
    Thickness,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Cutting, Task::Material, Task::Thickness];

    pub fn label(self, s: &WindowSample) -> String {
        match self {
            Task::Cutting => if s.cutting { "cutting" } else { "free" }.to_string(),
            Task::Material => s.material.to_string(),
            Task::Thickness => s.thickness.to_string(),
        }
    }

    pub fn averaging(self) -> Averaging {
        match self {
            Task::Cutting => Averaging::Binary,
            _ => Averaging::Macro,
        }
    }

    /// Class names in index order. Cutting is fixed to `[free, cutting]` so
    /// that the positive class is index 1.
    pub fn classes<'a>(self, samples: impl IntoIterator<Item = &'a WindowSample>) -> Vec<String> {
        match self {
            Task::Cutting => vec!["free".into(), "cutting".into()],
            _ => samples
                .into_iter()
                .map(|s| self.label(s))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Cutting => "cutting",
            Task::Material => "material",
            Task::Thickness => "thickness",
        })
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cutting" => Ok(Task::Cutting),
            "material" => Ok(Task::Material),
            "thickness" => Ok(Task::Thickness),
            other => Err(Error::Invalid(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Vae,
    Vqvae,
    StateSpace,
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceKind::Vae => "vae",
            SourceKind::Vqvae => "vqvae",
            SourceKind::StateSpace => "state_space",
        })
    }
}

/// Where classification features come from.
#[derive(Clone, Copy, Debug)]
pub enum FeatureSource<'a> {
    /// The normalized window itself, length `3·H·N`.
    StateSpace,
    Vae(&'a VaeModel),
    VqVae(&'a VqVaeModel),
}

impl FeatureSource<'_> {
    pub fn kind(&self) -> SourceKind {
        match self {
            FeatureSource::StateSpace => SourceKind::StateSpace,
            FeatureSource::Vae(_) => SourceKind::Vae,
            FeatureSource::VqVae(_) => SourceKind::Vqvae,
        }
    }

    pub fn mode(&self) -> Option<Mode> {
        match self {
            FeatureSource::StateSpace => None,
            FeatureSource::Vae(m) => Some(m.arch.mode),
            FeatureSource::VqVae(m) => Some(m.arch.mode),
        }
    }

    pub fn features(&self, s: &WindowSample) -> Result<Vec<f64>> {
        match self {
            FeatureSource::StateSpace => Ok(s.x.clone()),
            FeatureSource::Vae(m) => m.latent_features(&s.x),
            FeatureSource::VqVae(m) => Ok(m.latent_features(&s.x)?.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub svm: SvmConfig,
    pub svm_seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    /// SHA-256 over task, SVM settings and the exact train/test sample
    /// identities; equal hashes mean two reports are directly comparable.
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub feature_source: SourceKind,
    pub mode: Option<Mode>,
    pub averaging: Averaging,
    pub f1: f64,
    pub classes: Vec<String>,
    /// Rows are true classes, columns predicted classes.
    pub confusion: Vec<Vec<usize>>,
    pub provenance: Provenance,
}

fn sample_hash(task: Task, svm: &SvmConfig, seed: u64, train: &[WindowSample], test: &[WindowSample]) -> String {
    let mut h = Sha256::new();
    let header = serde_json::json!({ "task": task, "svm": svm, "seed": seed });
    h.update(header.to_string().as_bytes());
    for (tag, set) in [("train", train), ("test", test)] {
        h.update(tag.as_bytes());
        for s in set {
            h.update(s.episode_id.as_bytes());
            h.update(s.t_index.to_le_bytes());
            h.update(s.x.len().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

fn encode_labels(task: Task, classes: &[String], samples: &[WindowSample]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            let l = task.label(s);
            classes
                .iter()
                .position(|c| *c == l)
                .ok_or_else(|| Error::Invalid(format!("label '{l}' missing from the {task} class list")))
        })
        .collect()
}

/// Fits the SVM on training-split features and scores the test split.
pub fn run_task(
    task: Task,
    source: FeatureSource<'_>,
    train: &[WindowSample],
    test: &[WindowSample],
    svm: &SvmConfig,
    seed: u64,
) -> Result<EvalReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Invalid(format!("{task}: empty train or test split")));
    }
    let classes = task.classes(train.iter().chain(test));
    let y_train = encode_labels(task, &classes, train)?;
    let y_test = encode_labels(task, &classes, test)?;
    if y_train.iter().collect::<BTreeSet<_>>().len() < 2 {
        return Err(Error::Invalid(format!(
            "{task}: training split has labels for only one class, cannot fit a classifier"
        )));
    }
    let x_train = train.iter().map(|s| source.features(s)).collect::<Result<Vec<_>>>()?;
    let model = fit_svm(&x_train, &y_train, svm, seed)?;
    let preds = test
        .iter()
        .map(|s| model.classify(&source.features(s)?))
        .collect::<Result<Vec<_>>>()?;
    let k = classes.len().max(model.num_classes);
    let f1 = f1_score(&preds, &y_test, task.averaging())?;
    Ok(EvalReport {
        task,
        feature_source: source.kind(),
        mode: source.mode(),
        averaging: task.averaging(),
        f1,
        classes,
        confusion: confusion_matrix(&preds, &y_test, k),
        provenance: Provenance {
            svm: *svm,
            svm_seed: seed,
            train_samples: train.len(),
            test_samples: test.len(),
            config_hash: sample_hash(task, svm, seed, train, test),
            checkpoint: None,
        },
    })
}

/// Anything producing a next-state forecast `[q, dq]` for a window.
pub trait Forecaster {
    fn forecast(&self, s: &WindowSample) -> Result<Vec<f64>>;
}

/// Predicts that the next state equals the last observed one.
#[derive(Clone, Copy, Debug)]
pub struct Persistence {
    pub h: usize,
    pub n: usize,
}

impl Forecaster for Persistence {
    fn forecast(&self, s: &WindowSample) -> Result<Vec<f64>> {
        Ok(s.last_state(self.h, self.n))
    }
}

impl Forecaster for VaeModel {
    fn forecast(&self, s: &WindowSample) -> Result<Vec<f64>> {
        self.predict_next(&s.x)
    }
}

impl Forecaster for VqVaeModel {
    fn forecast(&self, s: &WindowSample) -> Result<Vec<f64>> {
        self.predict_next(&s.x)
    }
}

impl Forecaster for LstmModel {
    fn forecast(&self, s: &WindowSample) -> Result<Vec<f64>> {
        self.predict_sample(s)
    }
}

pub fn forecast_all(f: &dyn Forecaster, samples: &[WindowSample]) -> Result<Vec<Vec<f64>>> {
    samples.iter().map(|s| f.forecast(s)).collect()
}

/// Maps normalized `[q, dq]` rows back to physical units.
pub fn denormalize_targets(rows: &[Vec<f64>], stats: &NormStats) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| r.iter().enumerate().map(|(c, &v)| stats.denormalize_value(c, v)).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionScore {
    pub rmse: f64,
    pub rmse_raw: Option<f64>,
}

/// RMSE on the normalized scale and, given statistics, in physical units.
pub fn score_forecasts(preds: &[Vec<f64>], samples: &[WindowSample], stats: Option<&NormStats>) -> Result<PredictionScore> {
    let truth: Vec<Vec<f64>> = samples.iter().map(|s| s.y_next.clone()).collect();
    let rmse_norm = rmse(preds, &truth)?;
    let rmse_raw = match stats {
        Some(st) => Some(rmse(&denormalize_targets(preds, st), &denormalize_targets(&truth, st))?),
        None => None,
    };
    Ok(PredictionScore {
        rmse: rmse_norm,
        rmse_raw,
    })
}
