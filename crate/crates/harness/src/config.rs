//! Line-based `key = value` experiment configuration.
//!
//! Blank lines and `#` comments are ignored. Lists are comma separated.
//! Defaults: `M = 10`, `K = 10`, all correlation coefficients 0.6,
//! `trials = 2000`, `T_c = 196`, `seed = 1`, training SNR `gamma_tr_db = -10`.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use lis_cnn::{Arch, TrainConfig};
use lis_core::downlink::DEFAULT_COHERENCE;
use lis_core::{CorrelationProfile, Method};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("missing required key `{0}`")]
    MissingRequired(&'static str),

    #[error("invalid configuration: {0}")]
    Invalid(String),

    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Experiment {
    MseVsSnr,
    MseVsRho,
    MmTrace,
    RateVsSnr,
    RateVsK,
    TableHyperparams,
    Train,
    GenData,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::MseVsSnr,
        Experiment::MseVsRho,
        Experiment::MmTrace,
        Experiment::RateVsSnr,
        Experiment::RateVsK,
        Experiment::TableHyperparams,
        Experiment::Train,
        Experiment::GenData,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Experiment::MseVsSnr => "mse-vs-snr",
            Experiment::MseVsRho => "mse-vs-rho",
            Experiment::MmTrace => "mm-trace",
            Experiment::RateVsSnr => "rate-vs-snr",
            Experiment::RateVsK => "rate-vs-k",
            Experiment::TableHyperparams => "table-hyperparams",
            Experiment::Train => "train",
            Experiment::GenData => "gen-data",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown experiment `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub m: usize,
    pub k: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    /// Pilot length; `None` means `K + 1`.
    pub t_p: Option<usize>,
    pub t_c: usize,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Training SNR grid for MSE sweeps.
    pub snr_db: Vec<f64>,
    pub rho_grid: Vec<f64>,
    /// Adds closed-form rows to MSE sweeps.
    pub analytic: bool,
    /// Skips Monte Carlo rows in MSE sweeps.
    pub analytic_only: bool,
    /// Training SNR of rate and MM experiments.
    pub gamma_tr_db: f64,
    pub gamma_bar_db: Vec<f64>,
    pub k_grid: Vec<usize>,
    pub mm_inits: usize,
    pub mm_epsilon: f64,
    pub mm_max_iter: usize,
    pub arch: Arch,
    pub depth: usize,
    pub features: usize,
    pub depth_grid: Vec<usize>,
    pub features_grid: Vec<usize>,
    pub train: TrainConfig,
    /// Dataset SNRs; `None` means 0 dB for DnCNN and -5, 0, 5 dB for FFDNet.
    pub train_snr_db: Option<Vec<f64>>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub out_dir: PathBuf,
    pub dncnn_weights: Option<PathBuf>,
    pub ffdnet_weights: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment) -> Self {
        let train = TrainConfig::default();
        Self {
            experiment,
            m: 10,
            k: 10,
            rho1: 0.6,
            rho2: 0.6,
            rho3: 0.6,
            t_p: None,
            t_c: DEFAULT_COHERENCE,
            trials: 2000,
            seed: 1,
            methods: match experiment {
                Experiment::RateVsSnr => vec![Method::Genie, Method::Lmmse, Method::Ls],
                Experiment::RateVsK => vec![Method::Genie],
                _ => vec![Method::Ls, Method::Lmmse],
            },
            snr_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            rho_grid: vec![0.0, 0.3, 0.6, 0.9],
            analytic: false,
            analytic_only: false,
            gamma_tr_db: -10.0,
            gamma_bar_db: vec![-10.0, -5.0, 0.0, 5.0, 10.0],
            k_grid: vec![2, 8, 32, 128],
            mm_inits: 5,
            mm_epsilon: lis_core::pilot::DEFAULT_MM_EPSILON,
            mm_max_iter: lis_core::pilot::DEFAULT_MM_MAX_ITER,
            arch: Arch::Dncnn,
            depth: 8,
            features: 4,
            depth_grid: vec![8],
            features_grid: vec![4],
            train,
            train_snr_db: None,
            train_size: 16000,
            val_size: 8000,
            test_size: 6000,
            out_dir: PathBuf::from("out"),
            dncnn_weights: None,
            ffdnet_weights: None,
            dataset: None,
        }
    }

    pub fn profile(&self) -> Result<CorrelationProfile, ConfigError> {
        CorrelationProfile::new(self.m, self.k, self.rho1, self.rho2, self.rho3).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn pilot_len(&self) -> usize {
        self.t_p.unwrap_or(self.k + 1)
    }

    pub fn dataset_snr_db(&self, arch: Arch) -> Vec<f64> {
        self.train_snr_db.clone().unwrap_or_else(|| match arch {
            Arch::Dncnn => vec![0.0],
            Arch::Ffdnet => vec![-5.0, 0.0, 5.0],
        })
    }

    pub fn weights_path(&self, arch: Arch) -> Option<&Path> {
        match arch {
            Arch::Dncnn => self.dncnn_weights.as_deref(),
            Arch::Ffdnet => self.ffdnet_weights.as_deref(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        self.profile()?;
        if self.pilot_len() < self.k + 1 {
            return bad(format!("T_p = {} is shorter than K + 1 = {}", self.pilot_len(), self.k + 1));
        }
        if self.pilot_len() >= self.t_c {
            return bad(format!("T_p = {} must be below T_c = {}", self.pilot_len(), self.t_c));
        }
        if self.trials == 0 || self.mm_inits == 0 || self.mm_max_iter == 0 {
            return bad("trials, mm_inits and mm_max_iter must be positive".into());
        }
        if !(self.mm_epsilon > 0.0) {
            return bad("mm_epsilon must be positive".into());
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty".into());
        }
        let grids_empty = self.snr_db.is_empty()
            || self.rho_grid.is_empty()
            || self.gamma_bar_db.is_empty()
            || self.k_grid.is_empty()
            || self.depth_grid.is_empty()
            || self.features_grid.is_empty()
            || self.train_snr_db.as_ref().is_some_and(|g| g.is_empty());
        if grids_empty {
            return bad("grids must not be empty".into());
        }
        if let Some(r) = self.rho_grid.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return bad(format!("rho_grid value {r} outside [0, 1)"));
        }
        if self.k_grid.contains(&0) {
            return bad("k_grid values must be positive".into());
        }
        if self.depth < 2 || self.depth_grid.iter().any(|d| *d < 2) {
            return bad("network depth must be at least 2".into());
        }
        if self.features == 0 || self.features_grid.contains(&0) {
            return bad("feature count must be positive".into());
        }
        if self.train_size == 0 || self.val_size == 0 || self.test_size == 0 {
            return bad("dataset split sizes must be positive".into());
        }
        self.train.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let paths: Vec<&Path> = [Some(self.out_dir.as_path()), self.dncnn_weights.as_deref(), self.ffdnet_weights.as_deref(), self.dataset.as_deref()]
            .into_iter()
            .flatten()
            .collect();
        for (i, a) in paths.iter().enumerate() {
            if paths[i + 1..].contains(a) {
                return bad(format!("path {} is referenced twice", a.display()));
            }
        }
        Ok(())
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("experiment", self.experiment.to_string());
        put("M", self.m.to_string());
        put("K", self.k.to_string());
        put("rho1", self.rho1.to_string());
        put("rho2", self.rho2.to_string());
        put("rho3", self.rho3.to_string());
        if let Some(t_p) = self.t_p {
            put("T_p", t_p.to_string());
        }
        put("T_c", self.t_c.to_string());
        put("trials", self.trials.to_string());
        put("seed", self.seed.to_string());
        put("methods", join(self.methods.iter().map(|m| m.as_str())));
        put("snr_db", join(&self.snr_db));
        put("rho_grid", join(&self.rho_grid));
        put("analytic", self.analytic.to_string());
        put("analytic_only", self.analytic_only.to_string());
        put("gamma_tr_db", self.gamma_tr_db.to_string());
        put("gamma_bar_db", join(&self.gamma_bar_db));
        put("k_grid", join(&self.k_grid));
        put("mm_inits", self.mm_inits.to_string());
        put("mm_epsilon", self.mm_epsilon.to_string());
        put("mm_max_iter", self.mm_max_iter.to_string());
        put("arch", self.arch.as_str().to_string());
        put("depth", self.depth.to_string());
        put("features", self.features.to_string());
        put("depth_grid", join(&self.depth_grid));
        put("features_grid", join(&self.features_grid));
        put("learning_rate", self.train.learning_rate.to_string());
        put("beta1", self.train.beta1.to_string());
        put("beta2", self.train.beta2.to_string());
        put("adam_epsilon", self.train.adam_epsilon.to_string());
        put("batch_size", self.train.batch_size.to_string());
        put("patience", self.train.patience.to_string());
        put("max_epochs", self.train.max_epochs.to_string());
        put("improvement_delta", self.train.improvement_delta.to_string());
        if let Some(g) = &self.train_snr_db {
            put("train_snr_db", join(g));
        }
        put("train_size", self.train_size.to_string());
        put("val_size", self.val_size.to_string());
        put("test_size", self.test_size.to_string());
        put("out_dir", self.out_dir.display().to_string());
        for (key, path) in [("dncnn_weights", &self.dncnn_weights), ("ffdnet_weights", &self.ffdnet_weights), ("dataset", &self.dataset)] {
            if let Some(p) = path {
                put(key, p.display().to_string());
            }
        }
        s
    }
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_value<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("cannot parse `{value}`: {e}"))
}

fn parse_list<T: FromStr>(value: &str) -> Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    value.split(',').map(|v| parse_value(v.trim())).collect()
}

fn parse_rho(value: &str) -> Result<f64, String> {
    let rho: f64 = parse_value(value)?;
    if !(0.0..1.0).contains(&rho) {
        return Err(format!("correlation coefficient {rho} outside [0, 1)"));
    }
    Ok(rho)
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, found `{value}`")),
    }
}

/// Parses configuration text.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut entries = Vec::new();
    let mut experiment = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse { line: line_no, message: format!("expected `key = value`, found `{line}`") });
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse { line: line_no, message: "empty key or value".into() });
        }
        if key == "experiment" {
            experiment = Some(value.parse::<Experiment>().map_err(|message| ConfigError::Parse { line: line_no, message })?);
        } else {
            entries.push((line_no, key, value));
        }
    }
    let mut cfg = ExperimentConfig::new(experiment.ok_or(ConfigError::MissingRequired("experiment"))?);
    for (line, key, value) in entries {
        apply(&mut cfg, key, value).map_err(|e| match e {
            ApplyError::Unknown => ConfigError::UnknownKey { line, key: key.to_string() },
            ApplyError::Value(message) => ConfigError::Parse { line, message: format!("{key}: {message}") },
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

enum ApplyError {
    Unknown,
    Value(String),
}

impl From<String> for ApplyError {
    fn from(s: String) -> Self {
        ApplyError::Value(s)
    }
}

fn apply(cfg: &mut ExperimentConfig, key: &str, value: &str) -> Result<(), ApplyError> {
    let t = &mut cfg.train;
    match key {
        "M" => cfg.m = parse_value(value)?,
        "K" => cfg.k = parse_value(value)?,
        "rho" => {
            let r = parse_rho(value)?;
            (cfg.rho1, cfg.rho2, cfg.rho3) = (r, r, r);
        }
        "rho1" => cfg.rho1 = parse_rho(value)?,
        "rho2" => cfg.rho2 = parse_rho(value)?,
        "rho3" => cfg.rho3 = parse_rho(value)?,
        "T_p" => cfg.t_p = Some(parse_value(value)?),
        "T_c" => cfg.t_c = parse_value(value)?,
        "trials" => cfg.trials = parse_value(value)?,
        "seed" => cfg.seed = parse_value(value)?,
        "methods" => cfg.methods = parse_list(value)?,
        "snr_db" => cfg.snr_db = parse_list(value)?,
        "rho_grid" => cfg.rho_grid = parse_list(value)?,
        "analytic" => cfg.analytic = parse_bool(value)?,
        "analytic_only" => cfg.analytic_only = parse_bool(value)?,
        "gamma_tr_db" => cfg.gamma_tr_db = parse_value(value)?,
        "gamma_bar_db" => cfg.gamma_bar_db = parse_list(value)?,
        "k_grid" => cfg.k_grid = parse_list(value)?,
        "mm_inits" => cfg.mm_inits = parse_value(value)?,
        "mm_epsilon" => cfg.mm_epsilon = parse_value(value)?,
        "mm_max_iter" => cfg.mm_max_iter = parse_value(value)?,
        "arch" => cfg.arch = parse_value(value)?,
        "depth" => cfg.depth = parse_value(value)?,
        "features" => cfg.features = parse_value(value)?,
        "depth_grid" => cfg.depth_grid = parse_list(value)?,
        "features_grid" => cfg.features_grid = parse_list(value)?,
        "learning_rate" => t.learning_rate = parse_value(value)?,
        "beta1" => t.beta1 = parse_value(value)?,
        "beta2" => t.beta2 = parse_value(value)?,
        "adam_epsilon" => t.adam_epsilon = parse_value(value)?,
        "batch_size" => t.batch_size = parse_value(value)?,
        "patience" => t.patience = parse_value(value)?,
        "max_epochs" => t.max_epochs = parse_value(value)?,
        "improvement_delta" => t.improvement_delta = parse_value(value)?,
        "train_snr_db" => cfg.train_snr_db = Some(parse_list(value)?),
        "train_size" => cfg.train_size = parse_value(value)?,
        "val_size" => cfg.val_size = parse_value(value)?,
        "test_size" => cfg.test_size = parse_value(value)?,
        "out_dir" => cfg.out_dir = PathBuf::from(value),
        "dncnn_weights" => cfg.dncnn_weights = Some(PathBuf::from(value)),
        "ffdnet_weights" => cfg.ffdnet_weights = Some(PathBuf::from(value)),
        "dataset" => cfg.dataset = Some(PathBuf::from(value)),
        _ => return Err(ApplyError::Unknown),
    }
    Ok(())
}

/// Reads and parses a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.display().to_string(), message: e.to_string() })?;
    parse_config(&text)
}
