//! Configuration-driven experiment runner for LIS channel estimation.
//!
//! An experiment is described by a `key = value` file ([`config`]), run by
//! [`run_experiment`] and leaves CSV files plus a `manifest.json` in its
//! output directory. [`chart`] renders those CSVs as standalone SVG.

pub mod chart;
pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

use std::path::PathBuf;

use lis_core::Method;

pub use config::{load_config, parse_config, ConfigError, Experiment, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use output::RunManifest;

use output::OutputSet;

/// Runs one experiment. Outputs written before a failure are removed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let started_at = timestamp();
    let mut out = OutputSet::new(&cfg.out_dir)?;
    match experiments::dispatch(cfg, &mut out) {
        Ok(notes) => out.finish(RunManifest {
            experiment: cfg.experiment.to_string(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config: cfg.echo(),
            started_at,
            finished_at: timestamp(),
            outputs: Vec::new(),
            notes,
        }),
        Err(e) => {
            out.discard();
            Err(e)
        }
    }
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Experiment subcommands of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Analyze,
    SimulateMse,
    OptimizePhi,
    GenData,
    Train,
    EvalCnn,
    EvalRate,
}

impl Task {
    pub fn default_experiment(&self) -> Experiment {
        match self {
            Task::Analyze | Task::SimulateMse | Task::EvalCnn => Experiment::MseVsSnr,
            Task::OptimizePhi => Experiment::MmTrace,
            Task::GenData => Experiment::GenData,
            Task::Train => Experiment::Train,
            Task::EvalRate => Experiment::RateVsSnr,
        }
    }

    pub fn accepts(&self, e: Experiment) -> bool {
        use Experiment::*;
        match self {
            Task::Analyze | Task::SimulateMse | Task::EvalCnn => matches!(e, MseVsSnr | MseVsRho),
            Task::OptimizePhi => e == MmTrace,
            Task::GenData => e == GenData,
            Task::Train => matches!(e, Train | TableHyperparams),
            Task::EvalRate => matches!(e, RateVsSnr | RateVsK),
        }
    }
}

/// Command-line overrides shared by every experiment subcommand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// Builds the configuration a subcommand runs with.
pub fn prepare(task: Task, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &overrides.config {
        Some(path) => load_config(path)?,
        None => ExperimentConfig::new(task.default_experiment()),
    };
    if !task.accepts(cfg.experiment) {
        return Err(ConfigError::Invalid(format!("experiment `{}` cannot run under this subcommand", cfg.experiment)).into());
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &overrides.out {
        cfg.out_dir = out.clone();
    }
    match task {
        Task::Analyze => cfg.analytic_only = true,
        Task::EvalCnn => {
            if !cfg.methods.iter().any(|m| matches!(m, Method::Dncnn | Method::Ffdnet)) {
                if cfg.dncnn_weights.is_some() {
                    cfg.methods.push(Method::Dncnn);
                }
                if cfg.ffdnet_weights.is_some() {
                    cfg.methods.push(Method::Ffdnet);
                }
            }
            if !cfg.methods.iter().any(|m| matches!(m, Method::Dncnn | Method::Ffdnet)) {
                return Err(ConfigError::Invalid("eval-cnn needs `dncnn_weights` or `ffdnet_weights`".into()).into());
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}
