//! Experiment drivers. Each writes its CSVs through an [`OutputSet`] and
//! returns notes for the manifest.

use std::path::PathBuf;
use std::time::Instant;

use lis_cnn::data::{generate_dataset, Dataset, DatasetSpec, SplitSizes};
use lis_cnn::estimator::{denoise_batched, image_errors, summarize_errors};
use lis_cnn::io::{load_dataset, load_weights, save_dataset, save_weights};
use lis_cnn::train::{train, NetSpec, TrainLog};
use lis_cnn::{Arch, CnnEstimator, NetworkWeights};
use lis_core::downlink::rate_samples_with;
use lis_core::estimation::{
    analytic_mse_dft_parts, build_measurement, empirical_mse_with, from_db, ls_mse_closed_form, sigma2_from_snr_db, to_db, unit_pilots,
    GenieEstimator, LmmseEstimator, LsEstimator, MeasurementModel,
};
use lis_core::pilot::{dft_phase_matrix, lmmse_mse_of_phi, mm_optimize_phase, random_phase_matrix, MmOptions};
use lis_core::{build_czz, ChannelEstimator, ChannelSampler, CorrelationProfile, Method, RngStream};

use crate::config::{ConfigError, Experiment, ExperimentConfig};
use crate::error::Result;
use crate::output::{CnnEvalRow, MmRow, MseRow, OutputSet, RateRow, TimingRow, TrainLogRow};

const MSE_STREAM: u64 = 100;
const MM_STREAM: u64 = 300;
const RATE_STREAM: u64 = 400;
const RATE_K_STREAM: u64 = 500;
const INFER_CHUNK: usize = 500;

pub fn arch_of(method: Method) -> Option<Arch> {
    match method {
        Method::Dncnn => Some(Arch::Dncnn),
        Method::Ffdnet => Some(Arch::Ffdnet),
        _ => None,
    }
}

/// Loads the weights of every CNN method in the configuration.
fn load_cnn_weights(cfg: &ExperimentConfig) -> Result<Vec<(Method, NetworkWeights<f32>)>> {
    let mut out = Vec::new();
    for &method in &cfg.methods {
        let Some(arch) = arch_of(method) else { continue };
        let path = cfg
            .weights_path(arch)
            .ok_or_else(|| ConfigError::Invalid(format!("method {method} needs `{}_weights`", arch.as_str())))?;
        let w = load_weights(path)?;
        if w.arch != arch {
            return Err(ConfigError::Invalid(format!("{} holds {} weights", path.display(), w.arch.as_str())).into());
        }
        out.push((method, w));
    }
    Ok(out)
}

fn estimator_for(
    method: Method,
    model: &MeasurementModel,
    p: &CorrelationProfile,
    cnn: &[(Method, NetworkWeights<f32>)],
) -> Result<Box<dyn ChannelEstimator>> {
    Ok(match method {
        Method::Ls => Box::new(LsEstimator::new(model.clone())?),
        Method::Lmmse => Box::new(LmmseEstimator::new(model.clone(), &build_czz(p)?)?),
        Method::Genie => Box::new(GenieEstimator),
        Method::Dncnn | Method::Ffdnet => {
            let w = cnn.iter().find(|(m, _)| *m == method).map(|(_, w)| w.clone()).expect("weights loaded for every CNN method");
            Box::new(CnnEstimator::new(w, model.clone())?)
        }
    })
}

fn mse_row(cfg: &ExperimentConfig, p: &CorrelationProfile, method: &str, snr_db: f64, parts: (f64, f64), stderr: f64, trials: usize) -> MseRow {
    MseRow {
        method: method.to_string(),
        m: p.m,
        k: p.k,
        t_p: cfg.pilot_len(),
        rho1: p.rho1,
        rho2: p.rho2,
        rho3: p.rho3,
        snr_db,
        mse_total_db: to_db(parts.0 + parts.1),
        mse_direct_db: to_db(parts.0),
        mse_cascaded_db: to_db(parts.1),
        stderr_linear: stderr,
        trials,
        seed: cfg.seed,
    }
}

/// MSE rows for one correlation profile over the SNR grid. Every method
/// sees the same channels and noise at a given SNR index.
fn mse_rows(cfg: &ExperimentConfig, p: &CorrelationProfile, cnn: &[(Method, NetworkWeights<f32>)]) -> Result<Vec<MseRow>> {
    let t_p = cfg.pilot_len();
    let phi = dft_phase_matrix(t_p, p.k)?;
    let sampler = ChannelSampler::new(*p)?;
    let mut rows = Vec::new();
    for (i, &snr) in cfg.snr_db.iter().enumerate() {
        let sigma2 = sigma2_from_snr_db(snr);
        if cfg.analytic || cfg.analytic_only {
            rows.push(mse_row(cfg, p, "ls-analytic", snr, ls_mse_closed_form(p, t_p, sigma2), 0.0, 0));
            rows.push(mse_row(cfg, p, "lmmse-analytic", snr, analytic_mse_dft_parts(p, t_p, sigma2)?, 0.0, 0));
        }
        if cfg.analytic_only {
            continue;
        }
        let model = build_measurement(&phi, &unit_pilots(t_p), sigma2, p.m)?;
        for &method in &cfg.methods {
            let est = estimator_for(method, &model, p, cnn)?;
            let s = empirical_mse_with(est.as_ref(), &sampler, &model, cfg.trials, RngStream::new(cfg.seed, MSE_STREAM + i as u64))?;
            rows.push(mse_row(cfg, p, method.as_str(), snr, (s.direct, s.cascaded), s.stderr_total, s.trials));
        }
    }
    Ok(rows)
}

fn cnn_notes(cfg: &ExperimentConfig, cnn: &[(Method, NetworkWeights<f32>)], eval_snr: &str) -> Vec<String> {
    cnn.iter()
        .map(|(m, w)| {
            format!(
                "{m} weights (D={}, N_f={}) trained at {:?} dB, evaluated at {eval_snr}",
                w.depth,
                w.features,
                cfg.dataset_snr_db(w.arch)
            )
        })
        .collect()
}

pub fn mse_vs_snr(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    let cnn = if cfg.analytic_only { Vec::new() } else { load_cnn_weights(cfg)? };
    let rows = mse_rows(cfg, &cfg.profile()?, &cnn)?;
    out.write_csv("mse_vs_snr.csv", &rows)?;
    Ok(cnn_notes(cfg, &cnn, "snr_db"))
}

pub fn mse_vs_rho(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    let cnn = if cfg.analytic_only { Vec::new() } else { load_cnn_weights(cfg)? };
    let mut rows = Vec::new();
    for &rho in &cfg.rho_grid {
        let p = CorrelationProfile::new(cfg.m, cfg.k, rho, rho, rho)?;
        rows.extend(mse_rows(cfg, &p, &cnn)?);
    }
    out.write_csv("mse_vs_rho.csv", &rows)?;
    Ok(cnn_notes(cfg, &cnn, "snr_db"))
}

pub fn mm_trace(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    let p = cfg.profile()?;
    let czz = build_czz(&p)?;
    let sigma2 = sigma2_from_snr_db(cfg.gamma_tr_db);
    let opts = MmOptions { epsilon: cfg.mm_epsilon, max_iter: cfg.mm_max_iter };
    let row = |run: String, iteration: usize, mse: f64, lambda: Option<f64>, converged: bool| MmRow {
        run,
        iteration,
        mse,
        mse_db: to_db(mse),
        lambda,
        converged,
        m: p.m,
        k: p.k,
        rho1: p.rho1,
        rho2: p.rho2,
        rho3: p.rho3,
        snr_db: cfg.gamma_tr_db,
        seed: cfg.seed,
    };
    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let base = RngStream::new(cfg.seed, MM_STREAM);
    for run in 0..cfg.mm_inits {
        let init = random_phase_matrix(p.k + 1, p.k, base.substream(run as u64))?;
        let (_, trace) = mm_optimize_phase(&czz, sigma2, p.m, p.k, opts, &init)?;
        for (it, &mse) in trace.mse_per_iter.iter().enumerate() {
            let lambda = it.checked_sub(1).map(|j| trace.lambda_per_iter[j]);
            rows.push(row(run.to_string(), it, mse, lambda, trace.converged));
        }
        notes.push(format!("run {run}: {} iterations, converged = {}", trace.iterations, trace.converged));
    }
    let dft = lmmse_mse_of_phi(&dft_phase_matrix(p.k + 1, p.k)?, &czz, sigma2, p.m)?;
    rows.push(row("dft".into(), 0, dft, None, true));
    out.write_csv("mm_trace.csv", &rows)?;
    Ok(notes)
}

fn rate_rows_for(
    cfg: &ExperimentConfig,
    p: &CorrelationProfile,
    cnn: &[(Method, NetworkWeights<f32>)],
    stream: RngStream,
) -> Result<Vec<RateRow>> {
    let t_p = p.k + 1;
    let sigma2 = sigma2_from_snr_db(cfg.gamma_tr_db);
    let model = build_measurement(&dft_phase_matrix(t_p, p.k)?, &unit_pilots(t_p), sigma2, p.m)?;
    let sampler = ChannelSampler::new(*p)?;
    let gammas: Vec<f64> = cfg.gamma_bar_db.iter().map(|&g| from_db(g)).collect();
    let mut rows = Vec::new();
    for &method in &cfg.methods {
        let est = estimator_for(method, &model, p, cnn)?;
        let samples = rate_samples_with(est.as_ref(), &sampler, &model, &gammas, cfg.t_c, cfg.trials, stream)?;
        for (&g_db, (mean, stderr)) in cfg.gamma_bar_db.iter().zip(samples.summary()) {
            rows.push(RateRow {
                method: method.as_str().into(),
                m: p.m,
                k: p.k,
                t_p,
                t_c: cfg.t_c,
                rho1: p.rho1,
                rho2: p.rho2,
                rho3: p.rho3,
                gamma_tr_db: cfg.gamma_tr_db,
                gamma_bar_db: g_db,
                rate_mean: mean,
                rate_stderr: stderr,
                trials: cfg.trials,
                seed: cfg.seed,
            });
        }
    }
    Ok(rows)
}

pub fn rate_vs_snr(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    let cnn = load_cnn_weights(cfg)?;
    let rows = rate_rows_for(cfg, &cfg.profile()?, &cnn, RngStream::new(cfg.seed, RATE_STREAM))?;
    out.write_csv("rate_vs_snr.csv", &rows)?;
    Ok(cnn_notes(cfg, &cnn, &format!("gamma_tr_db = {}", cfg.gamma_tr_db)))
}

pub fn rate_vs_k(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    if cfg.methods.iter().any(|m| arch_of(*m).is_some()) {
        return Err(ConfigError::Invalid("rate-vs-k changes K, so trained networks cannot be reused".into()).into());
    }
    let mut rows = Vec::new();
    for (i, &k) in cfg.k_grid.iter().enumerate() {
        if k + 1 >= cfg.t_c {
            return Err(ConfigError::Invalid(format!("K = {k} needs T_p = {} below T_c = {}", k + 1, cfg.t_c)).into());
        }
        let p = CorrelationProfile::new(cfg.m, k, cfg.rho1, cfg.rho2, cfg.rho3)?;
        rows.extend(rate_rows_for(cfg, &p, &[], RngStream::new(cfg.seed, RATE_K_STREAM + i as u64))?);
    }
    out.write_csv("rate_vs_k.csv", &rows)?;
    Ok(Vec::new())
}

pub fn dataset_spec(cfg: &ExperimentConfig, arch: Arch) -> Result<DatasetSpec> {
    Ok(DatasetSpec {
        profile: cfg.profile()?,
        snr_db: cfg.dataset_snr_db(arch),
        sizes: SplitSizes { train: cfg.train_size, val: cfg.val_size, test: cfg.test_size },
        phi: dft_phase_matrix(cfg.pilot_len(), cfg.k)?,
        seed: cfg.seed,
    })
}

pub fn gen_data(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    let data = generate_dataset(&dataset_spec(cfg, cfg.arch)?)?;
    let path = cfg.dataset.clone().unwrap_or_else(|| out.path(&format!("{}_dataset.lisd", cfg.arch.as_str())));
    save_dataset(&data, &path)?;
    out.record(&path, &std::fs::read(&path)?);
    Ok(vec![format!("dataset SNRs {:?} dB", data.snr_db)])
}

/// Dataset from `cfg.dataset` when it exists, otherwise regenerated from the seed.
fn obtain_dataset(cfg: &ExperimentConfig, arch: Arch) -> Result<Dataset> {
    match &cfg.dataset {
        Some(path) if path.exists() => {
            let d = load_dataset(path)?;
            if (d.m, d.k, d.t_p) != (cfg.m, cfg.k, cfg.pilot_len()) {
                return Err(ConfigError::Invalid(format!("dataset {} does not match M, K, T_p", path.display())).into());
            }
            Ok(d)
        }
        _ => Ok(generate_dataset(&dataset_spec(cfg, arch)?)?),
    }
}

/// Per-SNR test-split MSE of trained weights.
pub fn evaluate_on_test(cfg: &ExperimentConfig, w: &NetworkWeights<f32>, log: &TrainLog, data: &Dataset) -> Result<Vec<CnnEvalRow>> {
    let mut rows = Vec::new();
    for &snr in &data.snr_db {
        let split = data.test.select_sigma2(sigma2_from_snr_db(snr));
        if split.is_empty() {
            continue;
        }
        let den = denoise_batched(w, &split.inputs, &split.sigma2, data.t_p, INFER_CHUNK)?;
        let e = summarize_errors(&image_errors(&den, &split.targets)?);
        let ls = summarize_errors(&image_errors(&split.inputs, &split.targets)?);
        rows.push(CnnEvalRow {
            arch: w.arch.as_str().into(),
            depth: w.depth,
            features: w.features,
            m: data.m,
            k: data.k,
            snr_db: snr,
            mse_total_db: to_db(e.total),
            mse_direct_db: to_db(e.direct),
            mse_cascaded_db: to_db(e.cascaded),
            ls_total_db: to_db(ls.total),
            epochs: log.epochs.len(),
            best_epoch: log.best_epoch,
            test_samples: split.len(),
            seed: cfg.seed,
        });
    }
    Ok(rows)
}

fn log_rows(arch: Arch, log: &TrainLog) -> Vec<TrainLogRow> {
    log.epochs
        .iter()
        .map(|e| TrainLogRow { arch: arch.as_str().into(), epoch: e.epoch, train_loss: e.train_loss, val_loss: e.val_loss })
        .collect()
}

pub fn train_network(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    let data = obtain_dataset(cfg, cfg.arch)?;
    let spec = NetSpec { arch: cfg.arch, depth: cfg.depth, features: cfg.features };
    let (w, log) = train(spec, &data, &cfg.train, cfg.seed)?;
    let path: PathBuf = cfg.weights_path(cfg.arch).map(PathBuf::from).unwrap_or_else(|| out.path(&format!("{}.lisw", cfg.arch.as_str())));
    save_weights(&w, &path)?;
    out.record(&path, &std::fs::read(&path)?);
    out.write_csv("train_log.csv", &log_rows(cfg.arch, &log))?;
    out.write_csv("test_mse.csv", &evaluate_on_test(cfg, &w, &log, &data)?)?;
    Ok(vec![format!(
        "{}: {} epochs, best epoch {}, stopped early = {}",
        cfg.arch.as_str(),
        log.epochs.len(),
        log.best_epoch,
        log.stopped_early
    )])
}

pub fn table_hyperparams(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    let mut rows = Vec::new();
    let mut logs = Vec::new();
    let mut timings = Vec::new();
    for arch in [Arch::Dncnn, Arch::Ffdnet] {
        let data = obtain_dataset(cfg, arch)?;
        for &depth in &cfg.depth_grid {
            for &features in &cfg.features_grid {
                let (w, log) = train(NetSpec { arch, depth, features }, &data, &cfg.train, cfg.seed)?;
                rows.extend(evaluate_on_test(cfg, &w, &log, &data)?);
                logs.extend(log_rows(arch, &log));
                let start = Instant::now();
                denoise_batched(&w, &data.test.inputs, &data.test.sigma2, data.t_p, INFER_CHUNK)?;
                let micros = start.elapsed().as_secs_f64() * 1e6 / data.test.len() as f64;
                timings.push(TimingRow { arch: arch.as_str().into(), depth, features, samples: data.test.len(), micros_per_sample: micros });
                let path = out.path(&format!("{}_D{depth}_N{features}.lisw", arch.as_str()));
                save_weights(&w, &path)?;
                out.record(&path, &std::fs::read(&path)?);
            }
        }
    }
    out.write_csv("table_hyperparams.csv", &rows)?;
    out.write_csv("train_log.csv", &logs)?;
    out.write_csv("timings.csv", &timings)?;
    Ok(vec!["timings.csv holds wall-clock measurements and is not reproducible".into()])
}

pub fn dispatch(cfg: &ExperimentConfig, out: &mut OutputSet) -> Result<Vec<String>> {
    match cfg.experiment {
        Experiment::MseVsSnr => mse_vs_snr(cfg, out),
        Experiment::MseVsRho => mse_vs_rho(cfg, out),
        Experiment::MmTrace => mm_trace(cfg, out),
        Experiment::RateVsSnr => rate_vs_snr(cfg, out),
        Experiment::RateVsK => rate_vs_k(cfg, out),
        Experiment::TableHyperparams => table_hyperparams(cfg, out),
        Experiment::Train => train_network(cfg, out),
        Experiment::GenData => gen_data(cfg, out),
    }
}
