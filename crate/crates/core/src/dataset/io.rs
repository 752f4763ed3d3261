//! On-disk episode schema: `<id>.csv` with header `t,q1..qN,dq1..dqN,tau1..tauN`
//! next to `<id>.json` holding `{material, thickness_in, rate_hz}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Episode, JointState, Material, Thickness};
use crate::error::{Error, Result};

/// Sidecar metadata. `thickness_in` is a number (inches) for catalog values
/// and a `synthetic-*` string otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub material: Material,
    pub thickness_in: Value,
    pub rate_hz: f64,
}

impl EpisodeMeta {
    pub fn new(material: Material, thickness: &Thickness, rate_hz: f64) -> Self {
        let thickness_in = match thickness.inches() {
            Some(v) => Value::from(v),
            None => Value::from(thickness.to_string()),
        };
        Self {
            material,
            thickness_in,
            rate_hz,
        }
    }

    fn thickness(&self) -> std::result::Result<Thickness, String> {
        match &self.thickness_in {
            Value::Number(n) => {
                let v = n.as_f64().ok_or("thickness_in is not a finite number")?;
                Thickness::from_inches(v).ok_or_else(|| format!("thickness {v} in is not a catalog value"))
            }
            Value::String(s) => s.parse(),
            other => Err(format!("thickness_in must be number or string, got {other}")),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct LoadReport {
    pub directory: PathBuf,
    pub episodes: Vec<LoadedEpisode>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LoadedEpisode {
    pub id: String,
    pub rows: usize,
    pub joints: usize,
    pub material: String,
    pub thickness: String,
}

pub fn load_episodes(dir: &Path) -> Result<Vec<Episode>> {
    load_episodes_with_report(dir).map(|(eps, _)| eps)
}

/// Loads every `*.csv` in `dir` (non-recursive), sorted by id.
pub fn load_episodes_with_report(dir: &Path) -> Result<(Vec<Episode>, LoadReport)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut csvs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "csv") && path.is_file() {
            csvs.push(path);
        }
    }
    csvs.sort();

    let mut episodes = Vec::with_capacity(csvs.len());
    for path in &csvs {
        episodes.push(read_episode(path)?);
    }
    episodes.sort_by(|a, b| a.id.cmp(&b.id));

    let report = LoadReport {
        directory: dir.to_path_buf(),
        episodes: episodes
            .iter()
            .map(|e| LoadedEpisode {
                id: e.id.clone(),
                rows: e.len(),
                joints: e.joints(),
                material: e.material.to_string(),
                thickness: e.thickness.to_string(),
            })
            .collect(),
    };
    Ok((episodes, report))
}

fn parse_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        file: file.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn expected_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "dq", "tau"] {
        h.extend((1..=n).map(|j| format!("{prefix}{j}")));
    }
    h
}

fn read_episode(csv_path: &Path) -> Result<Episode> {
    let id = csv_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| parse_err(csv_path, 0, "file name is not valid UTF-8"))?
        .to_string();
    let meta_path = csv_path.with_extension("json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: EpisodeMeta =
        serde_json::from_str(&meta_text).map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;
    let thickness = meta.thickness().map_err(|m| parse_err(&meta_path, 1, m))?;
    if !(meta.rate_hz.is_finite() && meta.rate_hz > 0.0) {
        return Err(parse_err(&meta_path, 1, "rate_hz must be positive"));
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(csv_path)
        .map_err(|e| parse_err(csv_path, 0, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(csv_path, 1, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.len() < 4 || (header.len() - 1) % 3 != 0 {
        return Err(parse_err(
            csv_path,
            1,
            format!("expected t plus 3N joint columns, got {} columns", header.len()),
        ));
    }
    let n = (header.len() - 1) / 3;
    let expected = expected_header(n);
    if let Some((want, got)) = expected.iter().zip(&header).find(|(w, g)| w != g) {
        return Err(parse_err(csv_path, 1, format!("missing column {want} (found {got})")));
    }

    let mut times = Vec::new();
    let mut series = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(csv_path, line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != header.len() {
            return Err(parse_err(
                csv_path,
                line,
                format!("expected {} fields, got {}", header.len(), record.len()),
            ));
        }
        let mut vals = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(csv_path, line, format!("column {}: bad number {field:?}", header[col])))?;
            if !v.is_finite() {
                return Err(parse_err(csv_path, line, format!("column {}: non-finite value", header[col])));
            }
            vals.push(v);
        }
        if let Some(&prev) = times.last() {
            if vals[0] <= prev {
                return Err(parse_err(csv_path, line, format!("time {} not after {}", vals[0], prev)));
            }
        }
        times.push(vals[0]);
        series.push(JointState {
            q: vals[1..1 + n].to_vec(),
            dq: vals[1 + n..1 + 2 * n].to_vec(),
            tau: vals[1 + 2 * n..].to_vec(),
        });
    }

    Ok(Episode {
        id,
        rate_hz: meta.rate_hz,
        material: meta.material,
        thickness,
        times,
        series,
    })
}

/// Writes `<dir>/<id>.csv` and `<dir>/<id>.json`.
pub fn write_episode(dir: &Path, ep: &Episode) -> Result<()> {
    let csv_path = dir.join(format!("{}.csv", ep.id));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(&csv_path)
        .map_err(|e| Error::Invalid(format!("{}: {e}", csv_path.display())))?;
    let to_invalid = |e: csv::Error| Error::Invalid(format!("{}: {e}", csv_path.display()));
    w.write_record(expected_header(ep.joints())).map_err(to_invalid)?;
    for (t, s) in ep.times.iter().zip(&ep.series) {
        let row = std::iter::once(t)
            .chain(&s.q)
            .chain(&s.dq)
            .chain(&s.tau)
            .map(|v| v.to_string());
        w.write_record(row).map_err(to_invalid)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let meta_path = dir.join(format!("{}.json", ep.id));
    let meta = EpisodeMeta::new(ep.material.clone(), &ep.thickness, ep.rate_hz);
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}
