use std::fs;
use std::process::{Command, Output};

fn lis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lis")).args(args).output().unwrap()
}

#[test]
fn analyze_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("an");
    let o = lis(&["analyze", "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("mse_vs_snr.csv")).unwrap();
    assert!(csv.lines().count() > 1);
    assert!(csv.lines().skip(1).all(|l| l.contains("-analytic")));
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 3"));
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "experiment = mse-vs-snr\nM = 4\nbogus = 1\n").unwrap();
    let o = lis(&["simulate-mse", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    fs::write(&cfg, "experiment = mm-trace\n").unwrap();
    let o = lis(&["eval-rate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let o = lis(&["eval-cnn", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_input_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("eval.cfg");
    fs::write(&cfg, format!("experiment = mse-vs-snr\nM = 4\nK = 3\ntrials = 5\ndncnn_weights = {}\n", dir.path().join("none.lisw").display())).unwrap();
    let o = lis(&["eval-cnn", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn chart_renders_svg_and_checks_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("r.csv");
    fs::write(&csv, "method,snr_db,mse\nls,0,10\nls,5,3\nlmmse,0,8\nlmmse,5,2.5\n").unwrap();
    let o = lis(&["chart", csv.to_str().unwrap(), "--x", "snr_db", "--y", "mse", "--series", "method", "--db"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let svg = fs::read_to_string(dir.path().join("r.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    let o = lis(&["chart", csv.to_str().unwrap(), "--x", "snr_db", "--y", "rate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    fs::write(&cfg, "experiment = mse-vs-snr\nM = 2\nK = 2\ntrials = 20\nsnr_db = 0\n").unwrap();
    let run = |seed: &str, sub: &str| {
        let out = dir.path().join(sub);
        let o = lis(&["simulate-mse", "--config", cfg.to_str().unwrap(), "--seed", seed, "--out", out.to_str().unwrap(), "--threads", "1"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out.join("mse_vs_snr.csv")).unwrap()
    };
    assert_eq!(run("1", "a"), run("1", "b"));
    assert_ne!(run("1", "a"), run("2", "c"));
}
