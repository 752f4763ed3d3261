//! Command-line front end. Each subcommand loads a [`RunConfig`] (from
//! `--config` or defaults), applies flag overrides and calls into
//! [`commands`].

pub mod commands;
pub mod config;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

pub use commands::{Checkpoint, EvalSummary, SweepRow, TrainedModel};
pub use config::{Family, RunConfig, SweepCell, SweepSpec};

use crate::vae::Mode;

#[derive(Debug, Parser)]
#[command(name = "latentdyn", version, about = "Latent dynamics models for robotic cutting")]
pub struct Cli {
    /// JSON run config; fields left out take their defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root for bundles, runs, evaluations and sweeps.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    pub force: bool,
    /// Dataset directory.
    #[arg(long, global = true, env = "LATENTDYN_DATA")]
    pub dataset: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset plus manifest.json into the dataset directory.
    Synth {
        /// Total episode count, spread round-robin over the catalog.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Label, split and normalize the dataset; writes bundle.json and strata.csv.
    Prepare,
    /// Train one model into `<out>/<run name>`.
    Train(ModelArgs),
    /// Score runs against the state-space baseline and persistence.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Run directory names under the output root; defaults to the configured run.
        #[arg(long = "run")]
        runs: Vec<String>,
    },
    /// Train and score every cell of a grid.
    Sweep {
        /// Sweep spec JSON.
        #[arg(long)]
        grid: PathBuf,
        /// Run cells concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// PCA scatter (CSV and SVG) of a latent model's test-split features.
    Viz(ModelArgs),
}

#[derive(Debug, Args, Default)]
pub struct ModelArgs {
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[arg(long)]
    pub beta_kl: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub run_name: Option<String>,
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(f) = self.family {
            cfg.family = f;
        }
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(l) = self.latent_dim {
            cfg.latent_dim = l;
        }
        if let Some(b) = self.beta_kl {
            cfg.beta_kl = b;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(n) = &self.run_name {
            cfg.run_name = Some(n.clone());
        }
    }
}

impl Cli {
    /// Config file (or defaults) with global flags applied. `--seed` sets the
    /// synthesis seed for `synth` and the training seed otherwise.
    pub fn resolve_config(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(d) = &self.dataset {
            cfg.dataset = d.clone();
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        match (&self.command, self.seed) {
            (Command::Synth { .. }, Some(s)) => cfg.synth_seed = s,
            (_, Some(s)) => cfg.seed = s,
            _ => {}
        }
        match &self.command {
            Command::Synth { episodes: Some(n) } => cfg.episodes = *n,
            Command::Train(m) | Command::Viz(m) | Command::Eval { model: m, .. } => m.apply(&mut cfg),
            _ => {}
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let cfg = cli.resolve_config()?;
    match &cli.command {
        Command::Synth { .. } => {
            commands::cmd_synth(&cfg, &cfg.dataset, cli.force)?;
        }
        Command::Prepare => {
            commands::cmd_prepare(&cfg)?;
        }
        Command::Train(_) => {
            commands::cmd_train(&cfg, cli.force)?;
        }
        Command::Eval { runs, .. } => {
            commands::cmd_eval(&cfg, runs)?;
        }
        Command::Sweep { grid, parallel } => {
            let spec = SweepSpec::load(grid).with_context(|| format!("loading sweep grid {}", grid.display()))?;
            commands::cmd_sweep(&cfg, &spec, *parallel)?;
        }
        Command::Viz(_) => {
            commands::cmd_viz(&cfg)?;
        }
    }
    Ok(())
}
