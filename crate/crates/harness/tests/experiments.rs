use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use lis_harness::output::{read_csv, read_manifest, MmRow, MseRow, RateRow, MANIFEST_FILE};
use lis_harness::{parse_config, run_experiment, Experiment, ExperimentConfig, HarnessError};

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = parse_config(text).unwrap();
    cfg.out_dir = out.to_path_buf();
    cfg
}

#[test]
fn identical_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let text = "experiment = mse-vs-snr\nM = 4\nK = 3\nrho = 0.6\ntrials = 200\nseed = 7\nanalytic = true\n";
    let out = dir.path().join("a");
    let a = run_experiment(&config(text, &out)).unwrap();
    let name = &a.outputs[0].path;
    let first = fs::read(out.join(name)).unwrap();
    assert_eq!(read_manifest(&out.join(MANIFEST_FILE)).unwrap(), a);
    let b = run_experiment(&config(text, &out)).unwrap();
    assert_eq!(a.without_timestamps(), b.without_timestamps());
    assert_eq!(first, fs::read(out.join(name)).unwrap());

    let c = run_experiment(&config(&text.replace("seed = 7", "seed = 8"), &dir.path().join("c"))).unwrap();
    assert_ne!(a.outputs[0].crc32, c.outputs[0].crc32);
}

#[test]
fn mse_rows_follow_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("experiment = mse-vs-snr\nM = 4\nK = 3\nrho = 0.3\ntrials = 100\nsnr_db = -5, 5\nanalytic = true\n", dir.path());
    run_experiment(&cfg).unwrap();
    let header = fs::read_to_string(dir.path().join("mse_vs_snr.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "method,M,K,T_p,rho1,rho2,rho3,snr_db,mse_total_db,mse_direct_db,mse_cascaded_db,stderr_linear,trials,seed"
    );
    let rows: Vec<MseRow> = read_csv(&dir.path().join("mse_vs_snr.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 4);
    for snr in [-5.0, 5.0] {
        let get = |m: &str| rows.iter().find(|r| r.method == m && r.snr_db == snr).unwrap().mse_total_db;
        assert!(get("lmmse") < get("ls"));
        assert!(get("lmmse-analytic") < get("ls-analytic"));
        assert!((get("ls") - get("ls-analytic")).abs() < 0.5);
    }
}

#[test]
fn rho_sweep_orders_lmmse_and_leaves_ls_flat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("experiment = mse-vs-rho\nM = 4\nK = 3\ntrials = 300\nsnr_db = 0\nanalytic_only = true\n", dir.path());
    run_experiment(&cfg).unwrap();
    let rows: Vec<MseRow> = read_csv(&dir.path().join("mse_vs_rho.csv")).unwrap();
    let series = |m: &str| rows.iter().filter(|r| r.method == m).map(|r| r.mse_total_db).collect::<Vec<_>>();
    let ls = series("ls-analytic");
    let lmmse = series("lmmse-analytic");
    assert_eq!(ls.len(), 4);
    assert!(ls.windows(2).all(|w| w[0] == w[1]));
    assert!(lmmse.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn mm_trace_is_monotone_with_dft_reference() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("experiment = mm-trace\nM = 2\nK = 3\nrho = 0.6\nmm_inits = 3\nmm_max_iter = 60\n", dir.path());
    let manifest = run_experiment(&cfg).unwrap();
    assert_eq!(manifest.notes.len(), 3);
    let rows: Vec<MmRow> = read_csv(&dir.path().join("mm_trace.csv")).unwrap();
    let mut runs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &rows {
        runs.entry(r.run.as_str()).or_default().push(r.mse);
    }
    let dft = runs.remove("dft").unwrap();
    assert_eq!(dft.len(), 1);
    assert_eq!(runs.len(), 3);
    for trace in runs.values() {
        assert!(trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        assert!(*trace.last().unwrap() >= dft[0] * (1.0 - 1e-9));
    }
    assert!(rows.iter().filter(|r| r.iteration == 0).all(|r| r.lambda.is_none()));
}

#[test]
fn rate_vs_snr_orders_estimators() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("experiment = rate-vs-snr\nM = 4\nK = 3\nrho = 0.6\ntrials = 300\ngamma_bar_db = 0, 10\n", dir.path());
    run_experiment(&cfg).unwrap();
    let rows: Vec<RateRow> = read_csv(&dir.path().join("rate_vs_snr.csv")).unwrap();
    assert_eq!(rows.len(), 6);
    for g in [0.0, 10.0] {
        let get = |m: &str| rows.iter().find(|r| r.method == m && r.gamma_bar_db == g).unwrap().rate_mean;
        assert!(get("genie") >= get("lmmse"));
        assert!(get("lmmse") >= get("ls"));
    }
    assert!(rows.iter().all(|r| r.t_p == 4 && r.t_c == 196));
}

#[test]
fn rate_vs_k_rejects_cnn_methods() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::new(Experiment::RateVsK);
    cfg.out_dir = dir.path().to_path_buf();
    cfg.methods.push(lis_core::Method::Dncnn);
    cfg.dncnn_weights = Some(dir.path().join("none.lisw"));
    assert!(matches!(run_experiment(&cfg), Err(HarnessError::Config(_))));
}

#[test]
fn failed_run_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("experiment = mse-vs-snr\nM = 4\nK = 3\ntrials = 10\nmethods = ls, dncnn\ndncnn_weights = {}\n", dir.path().join("absent.lisw").display());
    let err = run_experiment(&config(&text, &dir.path().join("run"))).unwrap_err();
    assert!(matches!(err, HarnessError::Io(_)));
    assert_eq!(err.exit_code(), 4);
    let left: Vec<_> = fs::read_dir(dir.path().join("run")).unwrap().collect();
    assert!(left.is_empty());
}

#[test]
fn train_then_evaluate_with_saved_weights() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("dncnn.lisw");
    let text = format!(
        "experiment = train\nM = 4\nK = 3\nrho = 0.9\narch = dncnn\ndepth = 3\nfeatures = 2\nmax_epochs = 2\nbatch_size = 50\n\
         train_size = 200\nval_size = 50\ntest_size = 50\ndncnn_weights = {}\n",
        weights.display()
    );
    let manifest = run_experiment(&config(&text, &dir.path().join("train"))).unwrap();
    assert!(weights.exists());
    assert!(manifest.outputs.iter().any(|f| f.path.ends_with("test_mse.csv")));

    let eval = format!("experiment = mse-vs-snr\nM = 4\nK = 3\nrho = 0.9\ntrials = 50\nsnr_db = 0\nmethods = ls, dncnn\ndncnn_weights = {}\n", weights.display());
    run_experiment(&config(&eval, &dir.path().join("eval"))).unwrap();
    let rows: Vec<MseRow> = read_csv(&dir.path().join("eval").join("mse_vs_snr.csv")).unwrap();
    assert!(rows.iter().any(|r| r.method == "dncnn" && r.mse_total_db.is_finite()));

    let bad = format!("experiment = mse-vs-snr\nM = 5\nK = 3\ntrials = 5\nmethods = dncnn\ndncnn_weights = {}\n", weights.display());
    assert!(run_experiment(&config(&bad, &dir.path().join("bad"))).is_err());
}
