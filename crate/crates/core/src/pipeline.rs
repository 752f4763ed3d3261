//! Dataset preparation shared by the CLI and the tests: labeling, splitting,
//! normalization and windowing, captured in a serializable [`Bundle`].

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    fit_normalizer, label_cutting, split, window, Episode, EpisodeLabels, LabelerConfig, Material, NormStats, Split,
    SplitRatios, Thickness, WindowSample,
};
use crate::error::{Error, Result};

pub const DEFAULT_H: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrepareConfig {
    pub h: usize,
    pub split_seed: u64,
    pub ratios: SplitRatios,
    pub labeler: LabelerConfig,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        Self {
            h: DEFAULT_H,
            split_seed: 0,
            ratios: SplitRatios::default(),
            labeler: LabelerConfig::default(),
        }
    }
}

/// Everything needed to rebuild the exact train/val/test windows from the
/// raw dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub dataset: PathBuf,
    pub config: PrepareConfig,
    pub split: Split,
    pub labels: BTreeMap<String, EpisodeLabels>,
    pub norm_stats: NormStats,
    /// Window count per episode id.
    pub windows: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StratumRow {
    pub material: Material,
    pub thickness: Thickness,
    pub episodes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub cut_fraction: f64,
}

impl Bundle {
    pub fn prepare(dataset: PathBuf, episodes: &[Episode], config: PrepareConfig) -> Result<Self> {
        if config.h == 0 {
            return Err(Error::Invalid("window length H must be >= 1".into()));
        }
        let mut labels = BTreeMap::new();
        for ep in episodes {
            labels.insert(ep.id.clone(), label_cutting(ep, &config.labeler)?);
        }
        let split = split(episodes, config.ratios, config.split_seed)?;
        let train: Vec<Episode> = split.select(episodes, &split.train).into_iter().cloned().collect();
        let norm_stats = fit_normalizer(&train)?;
        let windows = episodes
            .iter()
            .map(|e| (e.id.clone(), e.len().saturating_sub(config.h)))
            .collect();
        Ok(Self {
            dataset,
            config,
            split,
            labels,
            norm_stats,
            windows,
        })
    }

    pub fn ids(&self, part: Part) -> &[String] {
        match part {
            Part::Train => &self.split.train,
            Part::Val => &self.split.val,
            Part::Test => &self.split.test,
        }
    }

    pub fn joints(&self) -> usize {
        self.norm_stats.joints()
    }

    /// Normalized windows of one partition, in episode-id then time order.
    pub fn samples(&self, episodes: &[Episode], part: Part) -> Result<Vec<WindowSample>> {
        let ids = self.ids(part);
        let mut out = Vec::new();
        for id in ids {
            let ep = episodes
                .iter()
                .find(|e| &e.id == id)
                .ok_or_else(|| Error::Invalid(format!("episode {id} listed in the bundle is missing from the dataset")))?;
            let labels = self.labels.get(id).cloned().unwrap_or_default();
            out.extend(window(&self.norm_stats.apply(ep)?, &labels, self.config.h));
        }
        Ok(out)
    }

    /// Per-(material, thickness) table: episode counts per split and the
    /// fraction of time steps labeled cutting.
    pub fn strata(&self, episodes: &[Episode]) -> Vec<StratumRow> {
        let mut rows: BTreeMap<(Material, Thickness), StratumRow> = BTreeMap::new();
        for ep in episodes {
            let row = rows.entry(ep.stratum()).or_insert_with(|| StratumRow {
                material: ep.material.clone(),
                thickness: ep.thickness.clone(),
                episodes: 0,
                train: 0,
                val: 0,
                test: 0,
                cut_fraction: 0.0,
            });
            row.episodes += 1;
            if self.split.train.contains(&ep.id) {
                row.train += 1;
            } else if self.split.val.contains(&ep.id) {
                row.val += 1;
            } else if self.split.test.contains(&ep.id) {
                row.test += 1;
            }
            let covered = self.labels.get(&ep.id).map_or(0, EpisodeLabels::covered);
            row.cut_fraction += covered as f64 / ep.len().max(1) as f64;
        }
        rows.into_values()
            .map(|mut r| {
                r.cut_fraction /= r.episodes as f64;
                r
            })
            .collect()
    }
}
