use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gvqa_core::config::RunConfig;
use gvqa_core::harness::{self, SimulationNoise, SimulationSpec};
use gvqa_core::{Error, TaskKind, Thresholds};
use tracing_subscriber::EnvFilter;

/// Multi-path grounded video question answering.
///
/// Logging goes to stderr and is controlled by `RUST_LOG` (default `warn`).
#[derive(Parser, Debug)]
#[command(name = "gvqa", version, about, long_about = None)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Answer and ground every question of a dataset.
    Run(RunArgs),
    /// Recompute predictions from recorded transcripts without calling agents.
    Fuse(FuseArgs),
    /// Score a predictions file against a dataset.
    Eval(EvalArgs),
    /// Run the multi-path / reflection ablation on synthetic data.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug)]
struct Overrides {
    /// Override a config key, e.g. `--set top_n=3` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    set: Vec<(String, String)>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Flat TOML config; defaults apply to absent keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dataset (JSONL).
    #[arg(long)]
    dataset: PathBuf,
    /// Predictions output (JSONL).
    #[arg(long)]
    out: PathBuf,
    /// Agent-call transcript output (JSONL).
    #[arg(long)]
    transcripts: PathBuf,
    /// Enabled reasoning paths.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(1..=3))]
    paths: Option<Vec<u8>>,
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskKind>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    /// Metric report (JSON, plus a `.txt` table) when the dataset has labels.
    #[arg(long)]
    report: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct FuseArgs {
    #[arg(long)]
    transcripts: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold)]
    iou_thresholds: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', value_parser = parse_threshold)]
    iop_thresholds: Option<Vec<f64>>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Questions per seed.
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    seeds: Vec<u64>,
    /// Comma-separated `span_jitter=…,conf_noise=…,answer_acc=…`; omitted
    /// keys keep their defaults.
    #[arg(long, value_parser = parse_noise, default_value = "")]
    noise: SimulationNoise,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Base config for fusion and grounding parameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_key_value(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse::<TaskKind>().map_err(|e| e.to_string())
}

fn parse_threshold(s: &str) -> Result<f64, String> {
    let t: f64 = s.trim().parse().map_err(|e| format!("{s:?}: {e}"))?;
    if !(0.0..=1.0).contains(&t) {
        return Err(format!("threshold {t} outside [0, 1]"));
    }
    Ok(t)
}

fn parse_noise(s: &str) -> Result<SimulationNoise, String> {
    let mut noise = SimulationNoise::default();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = parse_key_value(part)?;
        let v: f64 = value.parse().map_err(|e| format!("{part:?}: {e}"))?;
        match key.as_str() {
            "span_jitter" => noise.span_jitter = v,
            "conf_noise" => noise.conf_noise = v,
            "answer_acc" => noise.answer_acc = v,
            other => return Err(format!("unknown noise parameter {other:?}")),
        }
    }
    if !(noise.span_jitter >= 0.0 && noise.conf_noise >= 0.0 && (0.0..=1.0).contains(&noise.answer_acc)) {
        return Err("span_jitter and conf_noise must be >= 0 and answer_acc in [0, 1]".into());
    }
    Ok(noise)
}

fn load_config(path: Option<&Path>, overrides: &Overrides) -> anyhow::Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => RunConfig::default(),
    };
    for (key, value) in &overrides.set {
        config.set(key, value)?;
    }
    config.apply_env();
    Ok(config)
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut config = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(paths) = args.paths {
        config.paths = paths;
    }
    if let Some(task) = args.task {
        config.task = task;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    let summary = harness::run(&config, &args.dataset, &args.out, &args.transcripts, args.report.as_deref())?;
    println!("{} questions, {} failed", summary.n, summary.failed);
    if let Some(report) = summary.report {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn fuse(args: FuseArgs) -> anyhow::Result<()> {
    let mut config = load_config(args.config.as_deref(), &args.overrides)?;
    if let Some(workers) = args.workers {
        config.workers = workers;
    }
    config.validate()?;
    let summary = harness::fuse_replay(&config, &args.transcripts, &args.out)?;
    println!("{} questions replayed", summary.n);
    if !summary.skipped.is_empty() {
        eprintln!(
            "skipped {} questions with incomplete transcripts: {}",
            summary.skipped.len(),
            summary.skipped.join(", ")
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> anyhow::Result<()> {
    let defaults = Thresholds::default();
    let thresholds = Thresholds {
        iou: args.iou_thresholds.unwrap_or(defaults.iou),
        iop: args.iop_thresholds.unwrap_or(defaults.iop),
    };
    let report = harness::evaluate(&args.dataset, &args.pred, &args.report, &thresholds)?;
    print!("{}", report.to_table());
    Ok(())
}

fn simulate(args: SimulateArgs) -> anyhow::Result<()> {
    if args.n == 0 || args.seeds.is_empty() {
        bail!(Error::Config("--n and --seeds must be non-empty".into()));
    }
    let mut spec = SimulationSpec::new(args.n, args.seeds, args.noise);
    spec.workers = args.workers.max(1);
    if let Some(path) = &args.config {
        spec.base = RunConfig::load(path)?;
    }
    let report = harness::simulate(&spec)?;
    harness::write_simulation_report(&args.report, &report)?;
    print!("{}", report.to_table());
    Ok(())
}

/// Input and configuration problems are the caller's fault (exit 2);
/// everything else is a run failure (exit 1).
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::InvalidRecord { .. }
            | Error::DuplicateQid(_)
            | Error::Parse { .. }
            | Error::Json(_)
            | Error::InvalidSpan(_),
        ) => 2,
        Some(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();

    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Fuse(a) => fuse(a),
        Command::Eval(a) => eval(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
