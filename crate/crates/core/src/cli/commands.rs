use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use serde::{Deserialize, Serialize};

use super::config::{cell_name, Family, RunConfig, SweepSpec};
use crate::dataset::{load_episodes, Episode, NormStats, WindowSample};
use crate::eval::{
    confusion_csv, forecast_all, pca_fit, rmse, run_task, scatter_svg, score_forecasts, write_scatter_csv, EvalReport,
    FeatureSource, Forecaster, Persistence, ScatterPoint, Task,
};
use crate::lstm::LstmModel;
use crate::nn::Rng;
use crate::pipeline::{Bundle, Part};
use crate::synth::{default_catalog, make_dataset};
use crate::train::{train, EpochRecord, LossBreakdown, Objective, TrainOutcome};
use crate::vae::{VaeArch, VaeModel};
use crate::vqvae::{VqArch, VqVaeModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainedModel {
    Vae(VaeModel),
    Vqvae(VqVaeModel),
    Lstm(LstmModel),
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        match self {
            TrainedModel::Vae(_) => Family::Vae,
            TrainedModel::Vqvae(_) => Family::Vqvae,
            TrainedModel::Lstm(_) => Family::Lstm,
        }
    }

    pub fn features(&self) -> Option<FeatureSource<'_>> {
        match self {
            TrainedModel::Vae(m) => Some(FeatureSource::Vae(m)),
            TrainedModel::Vqvae(m) => Some(FeatureSource::VqVae(m)),
            TrainedModel::Lstm(_) => None,
        }
    }

    /// `None` for reconstruction-only latent models.
    pub fn forecaster(&self) -> Option<&dyn Forecaster> {
        match self {
            TrainedModel::Vae(m) if m.arch.mode.uses_pred() => Some(m),
            TrainedModel::Vqvae(m) if m.arch.mode.uses_pred() => Some(m),
            TrainedModel::Lstm(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub best_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub model: TrainedModel,
}

impl Checkpoint {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        if !path.is_file() {
            bail!("missing checkpoint: expected {}", path.display());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing checkpoint {}", path.display()))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

// ---------------------------------------------------------------- synth

pub const MANIFEST: &str = "manifest.json";

pub fn cmd_synth(cfg: &RunConfig, dir: &Path, force: bool) -> anyhow::Result<PathBuf> {
    if dir.exists() {
        let existing: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv" || x == "json"))
            .collect();
        if !existing.is_empty() {
            if !force {
                bail!(
                    "{} already contains {} dataset files; pass --force to overwrite",
                    dir.display(),
                    existing.len()
                );
            }
            for p in existing {
                fs::remove_file(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    ensure_dir(dir)?;
    if cfg.episodes == 0 {
        log::warn!("--episodes 0: writing an empty dataset");
    }
    let manifest = make_dataset(&default_catalog(), cfg.episodes, cfg.synth_seed, dir)?;
    write_json(&dir.join(MANIFEST), &manifest)?;
    println!("wrote {} episodes to {}", manifest.episodes.len(), dir.display());
    Ok(dir.to_path_buf())
}

// ---------------------------------------------------------------- prepare

fn load_dataset(cfg: &RunConfig) -> anyhow::Result<Vec<Episode>> {
    ensure!(
        cfg.dataset.is_dir(),
        "dataset directory {} does not exist (run `latentdyn synth` or set LATENTDYN_DATA)",
        cfg.dataset.display()
    );
    let eps = load_episodes(&cfg.dataset).with_context(|| format!("loading dataset {}", cfg.dataset.display()))?;
    ensure!(!eps.is_empty(), "dataset {} has no episodes", cfg.dataset.display());
    Ok(eps)
}

/// Episodes plus the bundle for `cfg`: the stored `bundle.json` when it was
/// prepared from the same dataset and settings, a fresh one otherwise.
pub fn load_prepared(cfg: &RunConfig) -> anyhow::Result<(Vec<Episode>, Bundle)> {
    let eps = load_dataset(cfg)?;
    let path = cfg.bundle_path();
    if path.is_file() {
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let stored: Bundle = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        if stored.dataset == cfg.dataset && stored.config == cfg.prepare_config() {
            return Ok((eps, stored));
        }
        log::info!("{} was prepared with other settings; preparing in memory", path.display());
    }
    let bundle = Bundle::prepare(cfg.dataset.clone(), &eps, cfg.prepare_config())?;
    Ok((eps, bundle))
}

pub fn cmd_prepare(cfg: &RunConfig) -> anyhow::Result<Bundle> {
    let eps = load_dataset(cfg)?;
    let bundle = Bundle::prepare(cfg.dataset.clone(), &eps, cfg.prepare_config())?;
    ensure_dir(&cfg.out)?;
    write_json(&cfg.bundle_path(), &bundle)?;

    let rows = bundle.strata(&eps);
    let mut csv = csv::Writer::from_path(cfg.out.join("strata.csv"))?;
    for r in &rows {
        csv.serialize(r)?;
    }
    csv.flush()?;

    let covered: usize = bundle.labels.values().map(|l| l.covered()).sum();
    let total: usize = eps.iter().map(Episode::len).sum();
    println!(
        "{} episodes (train {}, val {}, test {}{}), {} states, {:.1}% labeled cutting",
        eps.len(),
        bundle.split.train.len(),
        bundle.split.val.len(),
        bundle.split.test.len(),
        if bundle.split.stratified { ", stratified" } else { "" },
        total,
        100.0 * covered as f64 / total.max(1) as f64
    );
    println!("{:<24} {:>9} {:>5} {:>5} {:>4} {:>4} {:>7}", "material", "thickness", "eps", "train", "val", "test", "cut %");
    for r in &rows {
        println!(
            "{:<24} {:>9} {:>5} {:>5} {:>4} {:>4} {:>7.1}",
            r.material.to_string(),
            r.thickness.to_string(),
            r.episodes,
            r.train,
            r.val,
            r.test,
            100.0 * r.cut_fraction
        );
    }
    Ok(bundle)
}

// ---------------------------------------------------------------- train

const LOSS_TERMS: [&str; 6] = ["total", "recon", "pred", "kl", "codebook", "commitment"];

fn loss_term(l: &LossBreakdown, name: &str) -> f64 {
    match name {
        "total" => l.total,
        "recon" => l.recon,
        "pred" => l.pred,
        "kl" => l.kl,
        "codebook" => l.codebook,
        _ => l.commitment,
    }
}

fn active_terms(cfg: &RunConfig) -> [bool; 6] {
    let (recon, pred) = match cfg.family {
        Family::Lstm => (false, true),
        _ => (cfg.mode.uses_recon(), cfg.mode.uses_pred()),
    };
    let vae = cfg.family == Family::Vae;
    let vq = cfg.family == Family::Vqvae;
    [true, recon, pred, vae, vq, vq]
}

/// `epoch` then train and val columns per loss term; inactive terms are blank.
pub fn history_csv(cfg: &RunConfig, history: &[EpochRecord]) -> String {
    let active = active_terms(cfg);
    let mut out = String::from("epoch");
    for split in ["train", "val"] {
        for t in LOSS_TERMS {
            let _ = write!(out, ",{split}_{t}");
        }
    }
    out.push('\n');
    for r in history {
        let _ = write!(out, "{}", r.epoch);
        for l in [&r.train, &r.val] {
            for (t, on) in LOSS_TERMS.iter().zip(active) {
                if on {
                    let _ = write!(out, ",{}", loss_term(l, t));
                } else {
                    out.push(',');
                }
            }
        }
        out.push('\n');
    }
    out
}

fn fit<M: Objective>(
    model: M,
    cfg: &RunConfig,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
) -> anyhow::Result<TrainOutcome<M>> {
    train(model, train_set, val_set, &cfg.train_config()).context("training diverged or failed")
}

fn init_rng(cfg: &RunConfig) -> Rng {
    Rng::new(cfg.seed).derive(2)
}

pub fn build_and_train(
    cfg: &RunConfig,
    stats: &NormStats,
    train_set: &[WindowSample],
    val_set: &[WindowSample],
) -> anyhow::Result<(Checkpoint, Vec<EpochRecord>)> {
    let n = stats.joints();
    let mut rng = init_rng(cfg);
    let (model, best_epoch, best_val_loss, history) = match cfg.family {
        Family::Vae => {
            let arch = VaeArch {
                h: cfg.h,
                n,
                latent_dim: cfg.latent_dim,
                mode: cfg.mode,
            };
            let out = fit(VaeModel::new(arch, cfg.beta_kl, cfg.lambda_pred, &mut rng)?, cfg, train_set, val_set)?;
            let mut m = out.best;
            m.norm_stats = Some(stats.clone());
            (TrainedModel::Vae(m), out.best_epoch, out.best_val_loss, out.history)
        }
        Family::Vqvae => {
            let arch = VqArch {
                h: cfg.h,
                n,
                mode: cfg.mode,
            };
            let m = VqVaeModel::new(
                arch,
                cfg.code_dim,
                cfg.groups,
                cfg.num_codes,
                cfg.beta_commit,
                cfg.lambda_pred,
                &mut rng,
            )?;
            let out = fit(m, cfg, train_set, val_set)?;
            let mut m = out.best;
            m.norm_stats = Some(stats.clone());
            (TrainedModel::Vqvae(m), out.best_epoch, out.best_val_loss, out.history)
        }
        Family::Lstm => {
            let out = fit(LstmModel::new(cfg.h, n, cfg.lstm_hidden, &mut rng)?, cfg, train_set, val_set)?;
            let mut m = out.best;
            m.norm_stats = Some(stats.clone());
            (TrainedModel::Lstm(m), out.best_epoch, out.best_val_loss, out.history)
        }
    };
    let ckpt = Checkpoint {
        best_epoch,
        best_val_loss,
        model,
    };
    Ok((ckpt, history))
}

pub fn cmd_train(cfg: &RunConfig, force: bool) -> anyhow::Result<PathBuf> {
    cfg.validate()?;
    let dir = cfg.run_dir();
    if dir.join("checkpoint.json").exists() && !force {
        bail!("run directory {} already holds a checkpoint; pass --force to retrain", dir.display());
    }
    let (eps, bundle) = load_prepared(cfg)?;
    let train_set = bundle.samples(&eps, Part::Train)?;
    let val_set = bundle.samples(&eps, Part::Val)?;
    log::info!(
        "training {} on {} windows (val {})",
        cfg.run_name(),
        train_set.len(),
        val_set.len()
    );
    let (ckpt, history) = build_and_train(cfg, &bundle.norm_stats, &train_set, &val_set)?;

    ensure_dir(&dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("checkpoint.json"), &ckpt)?;
    fs::write(dir.join("history.csv"), history_csv(cfg, &history))?;
    let mut log_text = format!(
        "run {}\nfamily {} mode {} seed {}\ntrain windows {} val windows {}\n",
        cfg.run_name(),
        cfg.family,
        cfg.mode,
        cfg.seed,
        train_set.len(),
        val_set.len()
    );
    for r in &history {
        let _ = writeln!(log_text, "epoch {:>3} train {:.6} val {:.6}", r.epoch, r.train.total, r.val.total);
    }
    match (ckpt.best_epoch, ckpt.best_val_loss) {
        (Some(e), Some(v)) => {
            let _ = writeln!(log_text, "best epoch {e} val {v:.6}");
        }
        _ => log_text.push_str("no epochs run; checkpoint holds the initial parameters\n"),
    }
    fs::write(dir.join("train.log"), log_text)?;
    println!("{}", dir.display());
    Ok(dir)
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseRow {
    pub model: String,
    pub rmse: f64,
    pub rmse_raw: Option<f64>,
    pub predictions: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Source names in column order; `state_space` first.
    pub sources: Vec<String>,
    /// Per task, the F1 of each source (`None` when it could not be computed).
    pub f1: Vec<(Task, Vec<Option<f64>>)>,
    pub rmse: Vec<RmseRow>,
}

/// Predictions and targets in normalized units, one row per test window.
pub fn write_predictions(path: &Path, preds: &[Vec<f64>], samples: &[WindowSample]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = preds.first().map_or(0, Vec::len);
    let mut header = vec!["episode_id".to_string(), "t_index".to_string()];
    header.extend((0..dim).map(|i| format!("pred_{i}")));
    header.extend((0..dim).map(|i| format!("true_{i}")));
    w.write_record(&header)?;
    for (p, s) in preds.iter().zip(samples) {
        let mut rec = vec![s.episode_id.clone(), s.t_index.to_string()];
        rec.extend(p.iter().map(|v| v.to_string()));
        rec.extend(s.y_next.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a predictions file back and recomputes its RMSE.
pub fn rmse_from_predictions(path: &Path) -> anyhow::Result<f64> {
    let mut r = csv::Reader::from_path(path)?;
    let dim = (r.headers()?.len() - 2) / 2;
    let mut preds = Vec::new();
    let mut truth = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec.iter().skip(2).map(str::parse).collect::<Result<_, _>>()?;
        preds.push(vals[..dim].to_vec());
        truth.push(vals[dim..].to_vec());
    }
    Ok(rmse(&preds, &truth)?)
}

pub fn cmd_eval(cfg: &RunConfig, runs: &[String]) -> anyhow::Result<EvalSummary> {
    let runs: Vec<String> = if runs.is_empty() { vec![cfg.run_name()] } else { runs.to_vec() };
    let mut checkpoints = Vec::new();
    for run in &runs {
        let path = cfg.out.join(run).join("checkpoint.json");
        checkpoints.push((run.clone(), Checkpoint::load(&path)?));
    }
    let (eps, bundle) = load_prepared(cfg)?;
    let train_set = bundle.samples(&eps, Part::Train)?;
    let test_set = bundle.samples(&eps, Part::Test)?;
    ensure!(!test_set.is_empty(), "test split has no windows");
    let dir = cfg.out.join("eval");
    ensure_dir(&dir)?;

    let mut sources: Vec<(String, FeatureSource<'_>)> = vec![("state_space".into(), FeatureSource::StateSpace)];
    for (run, ck) in &checkpoints {
        if let Some(src) = ck.model.features() {
            sources.push((run.clone(), src));
        }
    }
    let mut f1 = Vec::new();
    for task in Task::ALL {
        let mut row = Vec::new();
        for (name, src) in &sources {
            match run_task(task, *src, &train_set, &test_set, &cfg.svm, cfg.seed) {
                Ok(mut report) => {
                    if name != "state_space" {
                        report.provenance.checkpoint = Some(cfg.out.join(name).join("checkpoint.json").display().to_string());
                    }
                    write_report(&dir, name, &report)?;
                    row.push(Some(report.f1));
                }
                Err(e) => {
                    log::warn!("{task} / {name}: {e}");
                    row.push(None);
                }
            }
        }
        f1.push((task, row));
    }

    let stats = Some(&bundle.norm_stats);
    let mut rmse_rows = Vec::new();
    let persistence = Persistence {
        h: bundle.config.h,
        n: bundle.joints(),
    };
    let mut forecasters: Vec<(String, &dyn Forecaster)> = vec![("persistence".into(), &persistence)];
    for (run, ck) in &checkpoints {
        if let Some(f) = ck.model.forecaster() {
            forecasters.push((run.clone(), f));
        }
    }
    for (name, f) in forecasters {
        let preds = forecast_all(f, &test_set)?;
        let score = score_forecasts(&preds, &test_set, stats)?;
        let file = format!("predictions_{name}.csv");
        write_predictions(&dir.join(&file), &preds, &test_set)?;
        rmse_rows.push(RmseRow {
            model: name,
            rmse: score.rmse,
            rmse_raw: score.rmse_raw,
            predictions: Some(file),
        });
    }

    let summary = EvalSummary {
        sources: sources.iter().map(|s| s.0.clone()).collect(),
        f1,
        rmse: rmse_rows,
    };
    write_summary(&dir, &summary)?;
    print!("{}", summary_markdown(&summary));
    Ok(summary)
}

fn write_report(dir: &Path, source: &str, report: &EvalReport) -> anyhow::Result<()> {
    write_json(&dir.join(format!("report_{}_{source}.json", report.task)), report)?;
    fs::write(
        dir.join(format!("confusion_{}_{source}.csv", report.task)),
        confusion_csv(&report.classes, &report.confusion),
    )?;
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

pub fn summary_markdown(s: &EvalSummary) -> String {
    let mut out = String::from("| task |");
    for src in &s.sources {
        let _ = write!(out, " {src} |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(s.sources.len()));
    out.push('\n');
    for (task, row) in &s.f1 {
        let _ = write!(out, "| {task} |");
        for v in row {
            let _ = write!(out, " {} |", fmt_opt(*v));
        }
        out.push('\n');
    }
    out.push_str("\n| model | rmse | rmse_raw |\n|---|---|---|\n");
    for r in &s.rmse {
        let _ = writeln!(out, "| {} | {:.6e} | {} |", r.model, r.rmse, r.rmse_raw.map_or("-".into(), |v| format!("{v:.6e}")));
    }
    out
}

fn write_summary(dir: &Path, s: &EvalSummary) -> anyhow::Result<()> {
    fs::write(dir.join("summary.md"), summary_markdown(s))?;
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    let mut header = vec!["task".to_string()];
    header.extend(s.sources.iter().cloned());
    w.write_record(&header)?;
    for (task, row) in &s.f1 {
        let mut rec = vec![task.to_string()];
        rec.extend(row.iter().map(|v| v.map_or(String::new(), |x| x.to_string())));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join("rmse.csv"))?;
    w.write_record(["model", "rmse", "rmse_raw", "predictions"])?;
    for r in &s.rmse {
        w.write_record([
            r.model.clone(),
            r.rmse.to_string(),
            r.rmse_raw.map_or(String::new(), |v| v.to_string()),
            r.predictions.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- sweep

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: String,
    pub seed: u64,
    pub family: Family,
    pub mode: String,
    pub status: String,
    pub f1_cutting: Option<f64>,
    pub f1_material: Option<f64>,
    pub f1_thickness: Option<f64>,
    pub rmse: Option<f64>,
    pub best_val_loss: Option<f64>,
    pub error: String,
}

fn run_cell(cfg: &RunConfig, eps: &[Episode], bundle: &Bundle, dir: &Path) -> anyhow::Result<SweepRow> {
    let train_set = bundle.samples(eps, Part::Train)?;
    let val_set = bundle.samples(eps, Part::Val)?;
    let test_set = bundle.samples(eps, Part::Test)?;
    let (ckpt, history) = build_and_train(cfg, &bundle.norm_stats, &train_set, &val_set)?;
    ensure_dir(dir)?;
    write_json(&dir.join("config.json"), cfg)?;
    write_json(&dir.join("checkpoint.json"), &ckpt)?;
    fs::write(dir.join("history.csv"), history_csv(cfg, &history))?;

    let mut f1 = [None; 3];
    if let Some(src) = ckpt.model.features() {
        for (slot, task) in f1.iter_mut().zip(Task::ALL) {
            let report = run_task(task, src, &train_set, &test_set, &cfg.svm, cfg.seed)?;
            *slot = Some(report.f1);
        }
    }
    let rmse = match ckpt.model.forecaster() {
        Some(f) => Some(score_forecasts(&forecast_all(f, &test_set)?, &test_set, None)?.rmse),
        None => None,
    };
    Ok(SweepRow {
        cell: String::new(),
        seed: cfg.seed,
        family: cfg.family,
        mode: cfg.mode.to_string(),
        status: "ok".into(),
        f1_cutting: f1[0],
        f1_material: f1[1],
        f1_thickness: f1[2],
        rmse,
        best_val_loss: ckpt.best_val_loss,
        error: String::new(),
    })
}

/// Trains and scores every grid cell, one CSV row per cell and seed. A failing
/// cell is recorded with its error and the sweep moves on.
pub fn cmd_sweep(base: &RunConfig, spec: &SweepSpec, parallel: bool) -> anyhow::Result<PathBuf> {
    let cells = spec.cells(base)?;
    let (eps, bundle) = load_prepared(base)?;
    let dir = base.out.join("sweep");
    ensure_dir(&dir)?;

    let run = |cell: &super::config::SweepCell| -> SweepRow {
        let name = cell_name(&cell.values, cell.seed);
        log::info!("sweep cell {name}");
        let result = if cell.config.prepare_config() == bundle.config && cell.config.dataset == bundle.dataset {
            run_cell(&cell.config, &eps, &bundle, &dir.join(&name))
        } else {
            Bundle::prepare(cell.config.dataset.clone(), &eps, cell.config.prepare_config())
                .map_err(anyhow::Error::from)
                .and_then(|b| run_cell(&cell.config, &eps, &b, &dir.join(&name)))
        };
        match result {
            Ok(mut row) => {
                row.cell = name;
                row
            }
            Err(e) => {
                log::warn!("sweep cell {name} failed: {e:#}");
                SweepRow {
                    cell: name,
                    seed: cell.seed,
                    family: cell.config.family,
                    mode: cell.config.mode.to_string(),
                    status: "failed".into(),
                    f1_cutting: None,
                    f1_material: None,
                    f1_thickness: None,
                    rmse: None,
                    best_val_loss: None,
                    error: format!("{e:#}"),
                }
            }
        }
    };

    let rows: Vec<SweepRow> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = cells.iter().map(|c| s.spawn(|| run(c))).collect();
            handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
        })
    } else {
        cells.iter().map(run).collect()
    };

    let axis_names: Vec<String> = spec.axes.keys().cloned().collect();
    let path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&path)?;
    let mut header: Vec<String> = vec!["cell".into(), "seed".into()];
    header.extend(axis_names.iter().cloned());
    header.extend(
        [
            "family",
            "mode",
            "status",
            "f1_cutting",
            "f1_material",
            "f1_thickness",
            "rmse",
            "best_val_loss",
            "error",
        ]
        .map(String::from),
    );
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for (row, cell) in rows.iter().zip(&cells) {
        let mut rec = vec![row.cell.clone(), row.seed.to_string()];
        rec.extend(cell.values.iter().map(|(_, v)| match v {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        }));
        rec.extend([
            row.family.to_string(),
            row.mode.clone(),
            row.status.clone(),
            opt(row.f1_cutting),
            opt(row.f1_material),
            opt(row.f1_thickness),
            opt(row.rmse),
            opt(row.best_val_loss),
            row.error.clone(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush()?;
    let failed = rows.iter().filter(|r| r.status != "ok").count();
    println!("{} cells ({} failed) -> {}", rows.len(), failed, path.display());
    Ok(path)
}

// ---------------------------------------------------------------- viz

pub fn cmd_viz(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let ckpt = Checkpoint::load(&cfg.run_dir().join("checkpoint.json"))?;
    let Some(source) = ckpt.model.features() else {
        bail!("{} is an LSTM run and has no latent space to project", cfg.run_name());
    };
    let (eps, bundle) = load_prepared(cfg)?;
    let test_set = bundle.samples(&eps, Part::Test)?;
    let feats = test_set.iter().map(|s| source.features(s)).collect::<crate::Result<Vec<_>>>()?;
    let dim = feats.first().map_or(0, Vec::len);
    ensure!(dim >= 1, "empty test split");
    let pca = pca_fit(&feats, dim.min(2))?;
    let points = feats
        .iter()
        .zip(&test_set)
        .map(|(z, s)| {
            let p = pca.project(z)?;
            Ok(ScatterPoint {
                x: p[0],
                y: p.get(1).copied().unwrap_or(0.0),
                cutting: s.cutting,
                material: s.material.to_string(),
                thickness: s.thickness.to_string(),
            })
        })
        .collect::<crate::Result<Vec<_>>>()?;
    let dir = cfg.run_dir().join("viz");
    ensure_dir(&dir)?;
    write_scatter_csv(&dir.join("latent_pca.csv"), &points)?;
    let title = format!("{}: test latents, first two principal components", cfg.run_name());
    fs::write(dir.join("latent_pca.svg"), scatter_svg(&points, &title))?;
    write_json(&dir.join("pca.json"), &pca)?;
    println!("{}", dir.display());
    Ok(dir)
}
