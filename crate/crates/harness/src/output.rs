//! CSV row schemas, atomic output files and the run manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub method: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T_p")]
    pub t_p: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub snr_db: f64,
    pub mse_total_db: f64,
    pub mse_direct_db: f64,
    pub mse_cascaded_db: f64,
    pub stderr_linear: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub method: String,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "T_p")]
    pub t_p: usize,
    #[serde(rename = "T_c")]
    pub t_c: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub gamma_tr_db: f64,
    pub gamma_bar_db: f64,
    pub rate_mean: f64,
    pub rate_stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

/// One point of an MM trajectory. The reference row has `run = "dft"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmRow {
    pub run: String,
    pub iteration: usize,
    pub mse: f64,
    pub mse_db: f64,
    pub lambda: Option<f64>,
    pub converged: bool,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub rho1: f64,
    pub rho2: f64,
    pub rho3: f64,
    pub snr_db: f64,
    pub seed: u64,
}

/// Test-split MSE of a trained network at one SNR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnEvalRow {
    pub arch: String,
    #[serde(rename = "D")]
    pub depth: usize,
    #[serde(rename = "N_f")]
    pub features: usize,
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub snr_db: f64,
    pub mse_total_db: f64,
    pub mse_direct_db: f64,
    pub mse_cascaded_db: f64,
    pub ls_total_db: f64,
    pub epochs: usize,
    pub best_epoch: usize,
    pub test_samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub arch: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Wall-clock inference cost; the only output that is not reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub arch: String,
    #[serde(rename = "D")]
    pub depth: usize,
    #[serde(rename = "N_f")]
    pub features: usize,
    pub samples: usize,
    pub micros_per_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub bytes: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub code_version: String,
    pub seed: u64,
    /// Canonical configuration text.
    pub config: String,
    pub started_at: String,
    pub finished_at: String,
    pub outputs: Vec<OutputFile>,
    pub notes: Vec<String>,
}

impl RunManifest {
    /// The manifest without its timestamps, for reproducibility checks.
    pub fn without_timestamps(&self) -> RunManifest {
        RunManifest { started_at: String::new(), finished_at: String::new(), ..self.clone() }
    }
}

/// Files written by one run. Every file is written to a `.partial` sibling
/// and renamed into place; [`OutputSet::discard`] removes them all again.
#[derive(Debug)]
pub struct OutputSet {
    dir: PathBuf,
    files: Vec<OutputFile>,
    written: Vec<PathBuf>,
}

impl OutputSet {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new(), written: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Resolves a file name against the output directory.
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn files(&self) -> &[OutputFile] {
        &self.files
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_atomic(path, bytes)?;
        self.record(path, bytes);
        Ok(())
    }

    /// Records a file written by another component.
    pub fn record(&mut self, path: &Path, bytes: &[u8]) {
        let shown = path.strip_prefix(&self.dir).unwrap_or(path);
        self.files.push(OutputFile { path: shown.display().to_string(), bytes: bytes.len() as u64, crc32: crc32fast::hash(bytes) });
        self.written.push(path.to_path_buf());
    }

    pub fn write_csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<()> {
        let bytes = csv_bytes(rows)?;
        self.write(&self.path(name), &bytes)
    }

    pub fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
    }

    /// Writes the manifest listing every output; removes the outputs if
    /// that fails.
    pub fn finish(self, mut manifest: RunManifest) -> Result<RunManifest> {
        manifest.outputs = self.files.clone();
        let written = write_manifest(&self.dir.join(MANIFEST_FILE), &manifest);
        if written.is_err() {
            for p in &self.written {
                let _ = fs::remove_file(p);
            }
        }
        written.map(|_| manifest)
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let json = serde_json::to_vec_pretty(manifest).map_err(|e| HarnessError::Io(e.to_string()))?;
    write_atomic(path, &json)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let bytes = fs::read(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

pub fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io(e.to_string()))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = fs::write(&tmp, bytes).and_then(|_| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))
}

/// Reads a CSV written by this crate back into rows.
pub fn read_csv<R: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<R>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(|e| HarnessError::SchemaMismatch(e.to_string()))).collect()
}
