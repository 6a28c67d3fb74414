use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use strata::backend;
use strata::bench::{emit_table, parse_key_values, run_benchmark, BenchSpec, ModelConfig, Phase, TableFormat, DEFAULT_WARMUP};
use strata::core::model::{Mode, TaskModel};
use strata::preset::{FromPreset, LoadOptions, PresetStore};
use strata::{Error, Result};

#[derive(Parser)]
#[command(name = "bench", about = "Measure ms/step for training and prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run benchmarks and print or write a table
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Preset to load, as NAME or NAME@VERSION (default version: latest)
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Preset store directory
    #[arg(long, default_value = "presets")]
    store: PathBuf,
    /// key = value file describing the model (and optionally the run)
    #[arg(long)]
    config: Option<PathBuf>,
    /// train, predict, or both comma-separated
    #[arg(long, value_delimiter = ',')]
    phase: Vec<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// reference, optimized, or both comma-separated
    #[arg(long, value_delimiter = ',')]
    backend: Vec<String>,
    /// eager or graph (graph applies to predict)
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Seed for the random inputs
    #[arg(long)]
    data_seed: Option<u64>,
    /// Output file; `.csv` selects CSV, anything else markdown. Prints to
    /// stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn provenance() -> String {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let host = fs::read_to_string("/etc/hostname").map(|s| s.trim().to_owned()).unwrap_or_else(|_| "unknown host".into());
    format!(
        "\nMeasured on {host} ({} {}, {cores} hardware threads). These are local CPU timings; they are not comparable to published accelerator numbers.\n",
        std::env::consts::OS,
        std::env::consts::ARCH
    )
}

fn parse_or<T: std::str::FromStr>(kv: &BTreeMap<String, String>, key: &str, cli: Option<T>, default: T) -> Result<T> {
    if let Some(v) = cli {
        return Ok(v);
    }
    match kv.get(key) {
        Some(s) => s.parse().map_err(|_| Error::Usage(format!("bad value {s:?} for {key}"))),
        None => Ok(default),
    }
}

fn list(kv: &BTreeMap<String, String>, key: &str, cli: &[String], default: &str) -> Vec<String> {
    if !cli.is_empty() {
        return cli.to_vec();
    }
    kv.get(key).map_or(default, String::as_str).split(',').map(|s| s.trim().to_owned()).collect()
}

fn load_model(args: &RunArgs, kv: &BTreeMap<String, String>) -> Result<(String, TaskModel)> {
    if let Some(preset) = &args.preset {
        let (name, version) = preset.split_once('@').unwrap_or((preset, "latest"));
        let store = PresetStore::new(&args.store);
        let model = TaskModel::from_preset(&store, name, version, LoadOptions::default())?;
        return Ok((name.to_owned(), model));
    }
    let config = ModelConfig::from_key_values(kv)?;
    Ok((config.name.clone(), config.build()?))
}

fn run(args: RunArgs) -> Result<()> {
    let kv = match &args.config {
        Some(path) => parse_key_values(&fs::read_to_string(path).map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?)?,
        None => BTreeMap::new(),
    };
    let (name, model) = load_model(&args, &kv)?;
    let mode: Mode = parse_or(&kv, "mode", args.mode.clone(), "eager".into())?
        .parse()
        .map_err(|_| Error::Usage("mode must be eager or graph".into()))?;
    let mut rows = Vec::new();
    for backend_name in list(&kv, "backend", &args.backend, "optimized") {
        let backend = backend::by_name(&backend_name)
            .ok_or_else(|| Error::Usage(format!("unknown backend {backend_name:?} (expected one of {:?})", backend::BACKENDS)))?;
        for phase in list(&kv, "phase", &args.phase, "predict") {
            let phase: Phase = phase.parse()?;
            let spec = BenchSpec {
                model: name.clone(),
                phase,
                batch: parse_or(&kv, "batch", args.batch, 8)?,
                steps: parse_or(&kv, "steps", args.steps, 10)?,
                warmup: parse_or(&kv, "warmup", args.warmup, DEFAULT_WARMUP)?,
                backend: backend_name.clone(),
                mode: if phase == Phase::Train { Mode::Eager } else { mode },
                workers: if phase == Phase::Train { parse_or(&kv, "workers", args.workers, 1)? } else { 1 },
                seed: parse_or(&kv, "data_seed", args.data_seed, 0)?,
            };
            eprintln!("running {} {} on {} ({}, batch {})", spec.model, phase.name(), spec.backend, spec.mode, spec.batch);
            rows.push(run_benchmark(&spec, &model, backend.as_ref())?);
        }
    }
    let csv = args.out.as_ref().is_some_and(|p| p.extension().is_some_and(|e| e == "csv"));
    let mut text = emit_table(&rows, if csv { TableFormat::Csv } else { TableFormat::Markdown })?;
    if !csv {
        text.push_str(&provenance());
    }
    match &args.out {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io { path: path.clone(), source: e.into() })?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) | Error::NotFound { .. } | Error::Core(strata::core::Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
