use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::{LabelerConfig, SplitRatios};
use crate::eval::SvmConfig;
use crate::pipeline::{PrepareConfig, DEFAULT_H};
use crate::train::TrainConfig;
use crate::vae::Mode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Vae,
    Vqvae,
    Lstm,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Vae => "vae",
            Family::Vqvae => "vqvae",
            Family::Lstm => "lstm",
        })
    }
}

impl FromStr for Family {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "vae" => Ok(Family::Vae),
            "vqvae" => Ok(Family::Vqvae),
            "lstm" => Ok(Family::Lstm),
            _ => Err(format!("unknown model family {s:?} (expected vae, vqvae or lstm)")),
        }
    }
}

/// One experiment, end to end. Every field has a default, so a config file
/// only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    /// Explicit run directory name; derived from the model settings when unset.
    pub run_name: Option<String>,
    /// Model initialisation, batch order, sampling noise and SVM seed.
    pub seed: u64,
    pub synth_seed: u64,
    pub episodes: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub split_seed: u64,
    pub split: SplitRatios,
    pub labeler: LabelerConfig,
    pub family: Family,
    pub mode: Mode,
    /// VAE latent size L.
    pub latent_dim: usize,
    /// VQ-VAE embedding size D, group count G and codebook size K.
    pub code_dim: usize,
    pub groups: usize,
    pub num_codes: usize,
    pub beta_kl: f64,
    pub beta_commit: f64,
    pub lambda_pred: f64,
    pub lstm_hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub svm: SvmConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            dataset: PathBuf::from("data/synth"),
            out: PathBuf::from("runs"),
            run_name: None,
            seed: 0,
            synth_seed: 0,
            episodes: 60,
            h: DEFAULT_H,
            split_seed: 0,
            split: SplitRatios::default(),
            labeler: LabelerConfig::default(),
            family: Family::Vae,
            mode: Mode::Both,
            latent_dim: 4,
            code_dim: 4,
            groups: 4,
            num_codes: 64,
            beta_kl: 1.0,
            beta_commit: 0.25,
            lambda_pred: 1.0,
            lstm_hidden: crate::lstm::HIDDEN,
            epochs: train.epochs,
            batch: train.batch,
            lr: train.lr,
            svm: SvmConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(self.h >= 1, "H must be >= 1");
        ensure!(self.batch >= 1, "batch must be >= 1");
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive");
        ensure!(self.latent_dim >= 1, "latent_dim must be >= 1");
        ensure!(self.code_dim >= 1 && self.groups >= 1, "code_dim and groups must be >= 1");
        ensure!(self.num_codes >= 2, "num_codes must be >= 2");
        ensure!(self.lstm_hidden >= 1, "lstm_hidden must be >= 1");
        for (name, v) in [
            ("beta_kl", self.beta_kl),
            ("beta_commit", self.beta_commit),
            ("lambda_pred", self.lambda_pred),
        ] {
            ensure!(v >= 0.0 && v.is_finite(), "{name} must be finite and >= 0, got {v}");
        }
        ensure!(self.svm.c > 0.0, "svm.c must be positive");
        if let Some(name) = &self.run_name {
            ensure!(
                !name.is_empty() && !name.contains(['/', '\\']) && name != "." && name != "..",
                "run_name {name:?} is not a plain directory name"
            );
        }
        Ok(())
    }

    pub fn prepare_config(&self) -> PrepareConfig {
        PrepareConfig {
            h: self.h,
            split_seed: self.split_seed,
            ratios: self.split,
            labeler: self.labeler,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch: self.batch,
            lr: self.lr,
            seed: self.seed,
        }
    }

    pub fn run_name(&self) -> String {
        if let Some(n) = &self.run_name {
            return n.clone();
        }
        match self.family {
            Family::Vae => format!("vae-{}-L{}-b{}-s{}", self.mode, self.latent_dim, self.beta_kl, self.seed),
            Family::Vqvae => format!(
                "vqvae-{}-D{}xG{}-K{}-s{}",
                self.mode, self.code_dim, self.groups, self.num_codes, self.seed
            ),
            Family::Lstm => format!("lstm-h{}-s{}", self.lstm_hidden, self.seed),
        }
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(self.run_name())
    }

    pub fn bundle_path(&self) -> PathBuf {
        self.out.join("bundle.json")
    }
}

/// Grid of config overrides. Each axis names a [`RunConfig`] field and lists
/// its values; cells are the cartesian product, each trained once per seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axes: BTreeMap<String, Vec<Value>>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Overrides applied to every cell before the axes.
    #[serde(default)]
    pub base: BTreeMap<String, Value>,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    /// `(field, value)` per axis, in axis-name order.
    pub values: Vec<(String, Value)>,
    pub seed: u64,
    pub config: RunConfig,
}

impl SweepSpec {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading sweep spec {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing sweep spec {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        ensure!(!self.seeds.is_empty(), "sweep needs at least one seed");
        for (name, values) in &self.axes {
            ensure!(!values.is_empty(), "sweep axis {name:?} has no values");
            ensure!(name != "seed", "use the seeds list rather than a seed axis");
        }
        Ok(())
    }

    /// Expands the grid against `base`. The first axis varies slowest.
    pub fn cells(&self, base: &RunConfig) -> anyhow::Result<Vec<SweepCell>> {
        self.validate()?;
        let mut base_json = serde_json::to_value(base)?;
        for (k, v) in &self.base {
            set_field(&mut base_json, k, v.clone())?;
        }
        let mut combos: Vec<Vec<(String, Value)>> = vec![Vec::new()];
        for (name, values) in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((name.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        let mut out = Vec::new();
        for values in combos {
            for &seed in &self.seeds {
                let mut json = base_json.clone();
                for (k, v) in &values {
                    set_field(&mut json, k, v.clone())?;
                }
                set_field(&mut json, "seed", Value::from(seed))?;
                set_field(&mut json, "run_name", Value::from(cell_name(&values, seed)))?;
                let config: RunConfig = serde_json::from_value(json)
                    .with_context(|| format!("sweep cell {}", cell_name(&values, seed)))?;
                config.validate()?;
                out.push(SweepCell {
                    values: values.clone(),
                    seed,
                    config,
                });
            }
        }
        Ok(out)
    }
}

fn set_field(json: &mut Value, key: &str, v: Value) -> anyhow::Result<()> {
    let Value::Object(map) = json else {
        bail!("config is not a JSON object");
    };
    let key = if key == "h" { "H" } else { key };
    if !map.contains_key(key) && key != "run_name" {
        bail!("unknown config field {key:?} in sweep spec");
    }
    map.insert(key.to_string(), v);
    Ok(())
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn cell_name(values: &[(String, Value)], seed: u64) -> String {
    let mut parts: Vec<String> = values.iter().map(|(k, v)| format!("{k}={}", value_label(v))).collect();
    parts.push(format!("seed={seed}"));
    parts
        .join("_")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "=._-".contains(c) { c } else { '-' })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_all_defaults() {
        let c: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, RunConfig::default());
        c.validate().unwrap();
        assert_eq!(c.run_name(), "vae-both-L4-b1-s0");
    }

    #[test]
    fn unknown_field_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"latent": 3}"#).is_err());
    }

    #[test]
    fn grid_of_two_by_two_gives_four_cells_per_seed() {
        let spec: SweepSpec = serde_json::from_str(
            r#"{"axes": {"latent_dim": [2, 4], "beta_kl": [0.1, 1.0]}, "seeds": [0, 1], "base": {"epochs": 1}}"#,
        )
        .unwrap();
        let cells = spec.cells(&RunConfig::default()).unwrap();
        assert_eq!(cells.len(), 8);
        assert!(cells.iter().all(|c| c.config.epochs == 1));
        assert_eq!(cells[0].config.beta_kl, 0.1);
        assert_eq!(cells[0].config.latent_dim, 2);
        assert_eq!(cells[1].seed, 1);
        let names: std::collections::BTreeSet<_> = cells.iter().map(|c| c.config.run_name()).collect();
        assert_eq!(names.len(), 8);
    }

    #[test]
    fn bad_axis_rejected() {
        let spec: SweepSpec = serde_json::from_str(r#"{"axes": {"nope": [1]}}"#).unwrap();
        assert!(spec.cells(&RunConfig::default()).is_err());
        let spec: SweepSpec = serde_json::from_str(r#"{"axes": {"latent_dim": []}}"#).unwrap();
        assert!(spec.cells(&RunConfig::default()).is_err());
    }
}
