use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lis_harness::chart::{emit_chart, ChartSpec};
use lis_harness::{prepare, run_experiment, HarnessError, Overrides, Task};

/// LIS channel estimation experiments.
#[derive(Debug, Parser)]
#[command(name = "lis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct ChartArgs {
    /// Input CSV.
    csv: PathBuf,
    /// Column for the x axis.
    #[arg(long)]
    x: String,
    /// Column for the y axis.
    #[arg(long)]
    y: String,
    /// Column that splits rows into lines.
    #[arg(long)]
    series: Option<String>,
    /// Plot 10 log10 of the y values.
    #[arg(long)]
    db: bool,
    /// Logarithmic x axis.
    #[arg(long)]
    log_x: bool,
    #[arg(long)]
    title: Option<String>,
    /// Output SVG; defaults to the CSV path with an `.svg` extension.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Closed-form MSE curves only.
    Analyze(Common),
    /// Monte Carlo MSE sweeps over SNR or correlation.
    SimulateMse(Common),
    /// Majorization-minimization training-matrix design traces.
    OptimizePhi(Common),
    /// Generates and saves a CNN dataset.
    GenData(Common),
    /// Trains a network, or the hyperparameter table.
    Train(Common),
    /// MSE sweeps including trained networks.
    EvalCnn(Common),
    /// Achievable-rate sweeps over transmit SNR or K.
    EvalRate(Common),
    /// Renders a CSV as an SVG line chart.
    Chart(ChartArgs),
}

fn run(cli: Cli) -> Result<String, HarnessError> {
    let (task, common) = match cli.command {
        Command::Chart(a) => {
            let out = a.out.clone().unwrap_or_else(|| a.csv.with_extension("svg"));
            let spec = ChartSpec { x: a.x, y: a.y, series: a.series, db: a.db, log_x: a.log_x, title: a.title };
            emit_chart(&a.csv, &spec, &out)?;
            return Ok(format!("wrote {}", out.display()));
        }
        Command::Analyze(c) => (Task::Analyze, c),
        Command::SimulateMse(c) => (Task::SimulateMse, c),
        Command::OptimizePhi(c) => (Task::OptimizePhi, c),
        Command::GenData(c) => (Task::GenData, c),
        Command::Train(c) => (Task::Train, c),
        Command::EvalCnn(c) => (Task::EvalCnn, c),
        Command::EvalRate(c) => (Task::EvalRate, c),
    };
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| HarnessError::Config(lis_harness::ConfigError::Invalid(e.to_string())))?;
    }
    let cfg = prepare(task, &Overrides { config: common.config, seed: common.seed, out: common.out })?;
    let manifest = run_experiment(&cfg)?;
    let mut msg = format!("{} finished; outputs in {}", manifest.experiment, cfg.out_dir.display());
    for f in &manifest.outputs {
        msg.push_str(&format!("\n  {} ({} bytes, crc32 {:08x})", f.path, f.bytes, f.crc32));
    }
    Ok(msg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
