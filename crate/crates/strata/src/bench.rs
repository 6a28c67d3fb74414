//! ms/step benchmarks for training and inference, and the tables that
//! report them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use strata_core::model::train::{train_step, OptimizerState, TrainConfig};
use strata_core::model::{
    attach_head, Backbone, BackboneConfig, ConvnetConfig, EncodedBatch, Mode, TaskKind, TaskModel, TrainBatch, TransformerConfig,
};
use strata_core::{Backend, Error as CoreError, Rng, Tensor};

use crate::distribute::Threaded;
use crate::error::{Error, Result};

pub const DEFAULT_WARMUP: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Predict,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Train => "train",
            Phase::Predict => "predict",
        }
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Phase::Train),
            "predict" => Ok(Phase::Predict),
            other => Err(Error::Usage(format!("unknown phase {other:?} (expected train or predict)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSpec {
    /// Column label for the model.
    pub model: String,
    pub phase: Phase,
    pub batch: usize,
    pub steps: usize,
    pub warmup: usize,
    pub backend: String,
    pub mode: Mode,
    pub workers: usize,
    /// Seeds the random inputs, so compared specs see the same data.
    pub seed: u64,
}

impl BenchSpec {
    pub fn new(model: &str, phase: Phase, batch: usize, backend: &str) -> Self {
        BenchSpec {
            model: model.into(),
            phase,
            batch,
            steps: 10,
            warmup: DEFAULT_WARMUP,
            backend: backend.into(),
            mode: Mode::Eager,
            workers: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch == 0 || self.workers == 0 {
            return Err(Error::Usage("steps, batch and workers must be at least 1".into()));
        }
        if self.phase == Phase::Train && self.mode == Mode::Graph {
            return Err(Error::Usage("graph mode covers predict only; benchmark training in eager mode".into()));
        }
        if self.phase == Phase::Predict && self.workers != 1 {
            return Err(Error::Usage("workers applies to the train phase only".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub spec: BenchSpec,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl BenchRow {
    /// Population statistics over the measured samples.
    pub fn from_samples(spec: BenchSpec, samples: &[f64]) -> Self {
        let n = samples.len().max(1) as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        BenchRow {
            spec,
            mean_ms: mean,
            stddev_ms: var.sqrt(),
            min_ms: samples.iter().copied().fold(f64::INFINITY, f64::min),
            max_ms: samples.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Random but valid inputs for `model`, drawn from `Rng::new(seed)`.
pub fn random_batch(model: &TaskModel, rows: usize, seed: u64) -> TrainBatch {
    let mut rng = Rng::new(seed);
    let batch = match model.backbone().config() {
        BackboneConfig::TransformerLm(c) => {
            let len = c.max_len;
            let first = 4.min(c.vocab - 1);
            let ids = (0..rows * len).map(|_| (first + rng.below((c.vocab - first) as u64) as usize) as i32).collect();
            EncodedBatch::Text { rows, len, ids, mask: vec![1; rows * len] }
        }
        BackboneConfig::Convnet(c) => {
            let shape = [rows, c.height, c.width, c.in_channels];
            let values: Vec<f32> = (0..shape.iter().product()).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            EncodedBatch::Image { images: Tensor::from_vec(&shape, values).expect("shape matches") }
        }
    };
    let labels = match model.kind() {
        TaskKind::TextGeneration => Vec::new(),
        _ => (0..rows).map(|_| rng.below(model.num_classes() as u64) as usize).collect(),
    };
    TrainBatch { batch, labels }
}

/// Warmup steps, then `spec.steps` timed steps. Inputs are built before the
/// clock starts; graph capture happens before warmup.
pub fn run_benchmark(spec: &BenchSpec, model: &TaskModel, backend: &dyn Backend) -> Result<BenchRow> {
    spec.validate()?;
    let fail = |step: usize, e: &dyn std::fmt::Display| Error::Bench { phase: spec.phase.name().into(), step, message: e.to_string() };
    let data = random_batch(model, spec.batch, spec.seed);
    let mut samples = Vec::with_capacity(spec.steps);
    match spec.phase {
        Phase::Train => {
            let mut model = model.clone();
            let mut state = OptimizerState::new(TrainConfig::default().optimizer);
            let mut executor = Threaded { backend };
            for step in 0..spec.warmup + spec.steps {
                let start = Instant::now();
                train_step(&mut model, &mut state, &data, spec.workers, &mut executor).map_err(|e| fail(step, &e))?;
                if step >= spec.warmup {
                    samples.push(start.elapsed().as_secs_f64() * 1e3);
                }
            }
        }
        Phase::Predict => {
            let compiled = match spec.mode {
                Mode::Graph => Some(model.compile(&data.batch).map_err(|e| fail(0, &e))?),
                Mode::Eager => None,
            };
            for step in 0..spec.warmup + spec.steps {
                let start = Instant::now();
                let out = match &compiled {
                    Some(c) => c.logits(&data.batch, backend),
                    None => model.logits(&data.batch, backend, Mode::Eager),
                };
                out.map_err(|e| fail(step, &e))?;
                if step >= spec.warmup {
                    samples.push(start.elapsed().as_secs_f64() * 1e3);
                }
            }
        }
    }
    Ok(BenchRow::from_samples(spec.clone(), &samples))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

pub fn emit_table(rows: &[BenchRow], format: TableFormat) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::Usage("no benchmark rows to report".into()));
    }
    match format {
        TableFormat::Markdown => markdown(rows),
        TableFormat::Csv => Ok(csv(rows)),
    }
}

/// `1234567.891` as `1,234,567.89`.
pub fn format_ms(ms: f64) -> String {
    let fixed = format!("{ms:.2}");
    let (int, frac) = fixed.split_once('.').unwrap_or((&fixed, "00"));
    let (sign, digits) = int.strip_prefix('-').map_or(("", int), |d| ("-", d));
    let mut grouped = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            grouped.push(',');
        }
        grouped.push(c);
    }
    format!("{sign}{grouped}.{frac}")
}

fn row_label(spec: &BenchSpec, modes_vary: bool, workers_vary: bool) -> String {
    let mut label = spec.backend.clone();
    if modes_vary {
        label = format!("{label} ({})", spec.mode);
    }
    if workers_vary {
        label = format!("{label} x{}", spec.workers);
    }
    label
}

/// Models as column groups with train and predict sub-columns, one row per
/// backend configuration, the best value per column in bold and a final
/// "best" row.
fn markdown(rows: &[BenchRow]) -> Result<String> {
    let mut models: Vec<&str> = Vec::new();
    for r in rows {
        if !models.contains(&r.spec.model.as_str()) {
            models.push(&r.spec.model);
        }
    }
    let modes_vary = rows.iter().any(|r| r.spec.mode != rows[0].spec.mode);
    let workers_vary = rows.iter().any(|r| r.spec.workers != rows[0].spec.workers);
    let mut labels: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, usize, Phase), f64> = BTreeMap::new();
    let mut batch: BTreeMap<(usize, Phase), usize> = BTreeMap::new();
    for r in rows {
        let label = row_label(&r.spec, modes_vary, workers_vary);
        if !labels.contains(&label) {
            labels.push(label.clone());
        }
        let m = models.iter().position(|&m| m == r.spec.model).expect("model collected");
        if let Some(&b) = batch.get(&(m, r.spec.phase)) {
            if b != r.spec.batch {
                return Err(Error::Usage(format!(
                    "{} {} compared at batch sizes {b} and {}; use one batch size per model and phase",
                    r.spec.model, r.spec.phase.name(), r.spec.batch
                )));
            }
        }
        batch.insert((m, r.spec.phase), r.spec.batch);
        if cells.insert((label.clone(), m, r.spec.phase), r.mean_ms).is_some() {
            return Err(Error::Usage(format!("duplicate row for {label} on {} {}", r.spec.model, r.spec.phase.name())));
        }
    }
    let columns: Vec<(usize, Phase)> = (0..models.len()).flat_map(|m| [(m, Phase::Train), (m, Phase::Predict)]).collect();
    let best: Vec<Option<f64>> = columns
        .iter()
        .map(|&(m, p)| cells.iter().filter(|((_, cm, cp), _)| *cm == m && *cp == p).map(|(_, &v)| v).reduce(f64::min))
        .collect();

    let mut out = String::from("Average time taken (in ms/step)\n\n|  |");
    for m in &models {
        let _ = write!(out, " {m} |  |");
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(columns.len()));
    out.push_str("\n|  |");
    for _ in &models {
        out.push_str(" train | predict |");
    }
    out.push_str("\n| Batch Size |");
    for c in &columns {
        match batch.get(c) {
            Some(b) => {
                let _ = write!(out, " {b} |");
            }
            None => out.push_str(" NA |"),
        }
    }
    for label in &labels {
        let _ = write!(out, "\n| {label} |");
        for (i, &(m, p)) in columns.iter().enumerate() {
            match cells.get(&(label.clone(), m, p)) {
                Some(&v) if Some(v) == best[i] => {
                    let _ = write!(out, " **{}** |", format_ms(v));
                }
                Some(&v) => {
                    let _ = write!(out, " {} |", format_ms(v));
                }
                None => out.push_str(" NA |"),
            }
        }
    }
    out.push_str("\n| best |");
    for b in &best {
        match b {
            Some(v) => {
                let _ = write!(out, " {} |", format_ms(*v));
            }
            None => out.push_str(" NA |"),
        }
    }
    out.push('\n');
    Ok(out)
}

pub const CSV_HEADER: &str = "model,phase,batch,steps,warmup,backend,mode,workers,seed,mean_ms,stddev_ms,min_ms,max_ms";

/// One line per row. Floats use the shortest text that parses back to the
/// same value.
fn csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let s = &r.spec;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{:?},{:?},{:?},{:?}",
            s.model,
            s.phase.name(),
            s.batch,
            s.steps,
            s.warmup,
            s.backend,
            s.mode,
            s.workers,
            s.seed,
            r.mean_ms,
            r.stddev_ms,
            r.min_ms,
            r.max_ms
        );
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::Usage("CSV does not start with the benchmark header".into()));
    }
    let bad = |line: &str| Error::Usage(format!("malformed benchmark CSV line {line:?}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(bad(line));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(line));
            let float = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
            let spec = BenchSpec {
                model: f[0].into(),
                phase: f[1].parse()?,
                batch: int(f[2])?,
                steps: int(f[3])?,
                warmup: int(f[4])?,
                backend: f[5].into(),
                mode: f[6].parse().map_err(|_| bad(line))?,
                workers: int(f[7])?,
                seed: f[8].parse().map_err(|_| bad(line))?,
            };
            Ok(BenchRow { spec, mean_ms: float(f[9])?, stddev_ms: float(f[10])?, min_ms: float(f[11])?, max_ms: float(f[12])? })
        })
        .collect()
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Usage(format!("line {}: expected key = value", i + 1)))?;
        out.insert(k.trim().to_owned(), v.trim().to_owned());
    }
    Ok(out)
}

/// A model described by a key=value file. Unset keys take the values of the
/// built-in matmul-dominated transformer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub name: String,
    pub task: TaskKind,
    pub backbone: BackboneConfig,
    pub num_classes: usize,
    pub seed: u64,
}

/// Keys a config file may set besides the model description.
pub const BENCH_KEYS: [&str; 8] = ["phase", "batch", "steps", "warmup", "backend", "mode", "workers", "data_seed"];

impl ModelConfig {
    /// Two 256-wide transformer blocks over 32 tokens: nearly all time goes
    /// to 256x256 and 256x1024 matmuls.
    pub fn matmul_benchmark() -> Self {
        ModelConfig {
            name: "matmul256".into(),
            task: TaskKind::TextClassification,
            backbone: BackboneConfig::TransformerLm(TransformerConfig { vocab: 512, layers: 2, heads: 4, dim: 256, ff_dim: 1024, max_len: 32 }),
            num_classes: 2,
            seed: 0,
        }
    }

    pub fn from_key_values(kv: &BTreeMap<String, String>) -> Result<Self> {
        let mut config = Self::matmul_benchmark();
        let get = |k: &str| kv.get(k).map(String::as_str);
        let num = |k: &str, default: usize| -> Result<usize> {
            get(k).map_or(Ok(default), |v| v.parse().map_err(|_| Error::Usage(format!("{k} must be a whole number, got {v:?}"))))
        };
        for key in kv.keys() {
            let known = [
                "name", "task", "kind", "vocab", "layers", "heads", "dim", "ff_dim", "max_len", "height", "width", "in_channels",
                "channels", "num_classes", "seed",
            ];
            if !known.contains(&key.as_str()) && !BENCH_KEYS.contains(&key.as_str()) {
                return Err(Error::Usage(format!("unknown config key {key:?}")));
            }
        }
        if let Some(name) = get("name") {
            config.name = name.into();
        }
        if let Some(task) = get("task") {
            config.task = serde_json::from_value(serde_json::Value::String(task.into()))
                .map_err(|_| Error::Usage(format!("unknown task {task:?}")))?;
        }
        let default_kind = if config.task == TaskKind::ImageClassification { "convnet" } else { "transformer_lm" };
        config.backbone = match get("kind").unwrap_or(default_kind) {
            "transformer_lm" => {
                let BackboneConfig::TransformerLm(d) = Self::matmul_benchmark().backbone else { unreachable!() };
                BackboneConfig::TransformerLm(TransformerConfig {
                    vocab: num("vocab", d.vocab)?,
                    layers: num("layers", d.layers)?,
                    heads: num("heads", d.heads)?,
                    dim: num("dim", d.dim)?,
                    ff_dim: num("ff_dim", d.ff_dim)?,
                    max_len: num("max_len", d.max_len)?,
                })
            }
            "convnet" => {
                let d = ConvnetConfig::tiny();
                let channels = match get("channels") {
                    Some(v) => v
                        .split(',')
                        .map(|c| c.trim().parse().map_err(|_| Error::Usage(format!("channels must be comma-separated numbers, got {v:?}"))))
                        .collect::<Result<Vec<usize>>>()?,
                    None => d.channels,
                };
                BackboneConfig::Convnet(ConvnetConfig {
                    height: num("height", d.height)?,
                    width: num("width", d.width)?,
                    in_channels: num("in_channels", d.in_channels)?,
                    channels,
                })
            }
            other => return Err(Error::Usage(format!("unknown backbone kind {other:?}"))),
        };
        config.num_classes = num("num_classes", config.num_classes)?;
        config.seed = get("seed").map_or(Ok(0), |v| v.parse().map_err(|_| Error::Usage(format!("seed must be a number, got {v:?}"))))?;
        Ok(config)
    }

    pub fn build(&self) -> Result<TaskModel> {
        let backbone = Backbone::new(self.backbone.clone(), self.seed).map_err(|e| Error::Usage(e.to_string()))?;
        attach_head(backbone, self.task, self.num_classes).map_err(|e: CoreError| Error::Usage(e.to_string()))
    }
}
