//! Measurements shared by the per-module suites and the acceptance report.

#![allow(dead_code)]

use std::time::{Duration, Instant};

use strata::bench::{run_benchmark, BenchSpec, ModelConfig, Phase};
use strata::core::model::train::{train, Sequential, TrainConfig};
use strata::core::model::{attach_head, Backbone, BackboneConfig, Example, TaskModel, TaskKind, TransformerConfig};
use strata::core::{Backend, BinaryOp, DType, ReduceOp, Reference, Rng, Tensor, UnaryOp};
use strata::distribute::{data_parallel_fit, DistributionConfig};
use strata::pipeline::{self, range, Dataset};
use strata::Optimized;

pub const KERNELS: [&str; 20] = [
    "matmul", "conv2d", "relu", "gelu", "exp", "log", "neg", "add", "sub", "mul", "div", "sum", "mean", "max", "softmax",
    "log_softmax", "layernorm", "gather", "transpose", "slice_concat",
];

fn tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.uniform(lo, hi)).collect();
    Tensor::create(shape, DType::F32, &v).unwrap()
}

fn dim(rng: &mut Rng, max: u64) -> usize {
    1 + rng.below(max) as usize
}

/// Runs one randomised case of `kernel` on `backend`.
pub fn kernel_case(kernel: &str, seed: u64, backend: &dyn Backend) -> Tensor {
    let mut rng = Rng::new(seed);
    match kernel {
        "matmul" => {
            let (b, m, k, n) = (dim(&mut rng, 3), dim(&mut rng, 40), dim(&mut rng, 70), dim(&mut rng, 150));
            let x = tensor(&mut rng, &[b, m, k], -1.0, 1.0);
            let w = tensor(&mut rng, &[k, n], -1.0, 1.0);
            backend.matmul(&x, &w).unwrap()
        }
        "conv2d" => {
            let (n, h, w, c, co) = (dim(&mut rng, 2), dim(&mut rng, 10), dim(&mut rng, 10), dim(&mut rng, 4), dim(&mut rng, 6));
            let (k, stride, padding) = (1 + 2 * rng.below(2) as usize, dim(&mut rng, 2), rng.below(2) as usize);
            let x = tensor(&mut rng, &[n, h + k, w + k, c], -1.0, 1.0);
            let f = tensor(&mut rng, &[k, k, c, co], -1.0, 1.0);
            backend.conv2d(&x, &f, stride, padding).unwrap()
        }
        "relu" | "gelu" | "exp" | "log" | "neg" => {
            let op = match kernel {
                "relu" => UnaryOp::Relu,
                "gelu" => UnaryOp::Gelu,
                "exp" => UnaryOp::Exp,
                "log" => UnaryOp::Log,
                _ => UnaryOp::Neg,
            };
            let lo = if op == UnaryOp::Log { 0.01 } else { -5.0 };
            let shape = [dim(&mut rng, 16), dim(&mut rng, 16)];
            let x = tensor(&mut rng, &shape, lo, 5.0);
            backend.unary(op, &x).unwrap()
        }
        "add" | "sub" | "mul" | "div" => {
            let op = match kernel {
                "add" => BinaryOp::Add,
                "sub" => BinaryOp::Sub,
                "mul" => BinaryOp::Mul,
                _ => BinaryOp::Div,
            };
            let (r, c) = (dim(&mut rng, 16), dim(&mut rng, 16));
            let a = tensor(&mut rng, &[r, c], -3.0, 3.0);
            let b = if rng.chance(0.5) { tensor(&mut rng, &[c], 0.5, 3.0) } else { tensor(&mut rng, &[r, c], 0.5, 3.0) };
            backend.binary(op, &a, &b).unwrap()
        }
        "sum" | "mean" | "max" => {
            let op = match kernel {
                "sum" => ReduceOp::Sum,
                "mean" => ReduceOp::Mean,
                _ => ReduceOp::Max,
            };
            let shape = [dim(&mut rng, 8), dim(&mut rng, 8), dim(&mut rng, 8)];
            let x = tensor(&mut rng, &shape, -2.0, 2.0);
            let axis = rng.below(3) as usize;
            backend.reduce(op, &x, axis, rng.chance(0.5)).unwrap()
        }
        "softmax" | "log_softmax" => {
            let shape = [dim(&mut rng, 8), dim(&mut rng, 20)];
            let x = tensor(&mut rng, &shape, -10.0, 10.0);
            let axis = rng.below(2) as usize;
            if kernel == "softmax" { backend.softmax(&x, axis) } else { backend.log_softmax(&x, axis) }.unwrap()
        }
        "layernorm" => {
            let d = dim(&mut rng, 32);
            let rows = dim(&mut rng, 8);
            let x = tensor(&mut rng, &[rows, d], -2.0, 2.0);
            let g = tensor(&mut rng, &[d], 0.5, 1.5);
            let b = tensor(&mut rng, &[d], -0.5, 0.5);
            backend.layernorm(&x, &g, &b, 1e-5).unwrap()
        }
        "gather" => {
            let v = dim(&mut rng, 20);
            let width = dim(&mut rng, 8);
            let table = tensor(&mut rng, &[v, width], -1.0, 1.0);
            let n = dim(&mut rng, 12);
            let ids: Vec<i32> = (0..n).map(|_| rng.below(v as u64) as i32).collect();
            backend.gather(&table, &Tensor::from_vec(&[n], ids).unwrap()).unwrap()
        }
        "transpose" => {
            let shape = [dim(&mut rng, 5), dim(&mut rng, 5), dim(&mut rng, 5)];
            let x = tensor(&mut rng, &shape, -1.0, 1.0);
            let perms = [[0, 2, 1], [2, 0, 1], [1, 0, 2], [2, 1, 0]];
            backend.transpose(&x, &perms[rng.below(4) as usize]).unwrap()
        }
        _ => {
            let (r, c) = (dim(&mut rng, 8), 2 + rng.below(8) as usize);
            let x = tensor(&mut rng, &[r, c], -1.0, 1.0);
            let cut = 1 + rng.below(c as u64 - 1) as usize;
            let a = backend.slice(&x, 1, 0, cut).unwrap();
            let b = backend.slice(&x, 1, cut, c).unwrap();
            let flat = backend.reshape(&backend.concat(&[&b, &a], 1).unwrap(), &[r * c]).unwrap();
            assert_eq!(flat.numel(), r * c);
            flat
        }
    }
}

/// Largest `|a - b| / max(|a|, |b|)` over elements, zero where both are zero.
pub fn max_rel_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.to_f64_vec()
        .iter()
        .zip(b.to_f64_vec())
        .map(|(x, y)| {
            let scale = x.abs().max(y.abs());
            if x == &y { 0.0 } else { (x - y).abs() / scale }
        })
        .fold(0.0, f64::max)
}

/// Worst relative difference over `cases` seeds for each kernel.
pub fn kernel_agreement(cases: u64, a: &dyn Backend, b: &dyn Backend) -> Vec<(&'static str, f64)> {
    KERNELS
        .iter()
        .map(|&k| (k, (0..cases).map(|s| max_rel_diff(&kernel_case(k, s, a), &kernel_case(k, s, b))).fold(0.0, f64::max)))
        .collect()
}

pub fn toy_corpus() -> Vec<Example> {
    let words = ["good", "great", "fine", "nice", "bad", "awful", "poor", "sad"];
    (0..32).map(|i| Example::text(&format!("{} {}", words[i % 8], i), usize::from(i % 8 >= 4))).collect()
}

pub fn toy_classifier(seed: u64) -> TaskModel {
    let backbone = Backbone::new(BackboneConfig::TransformerLm(TransformerConfig::tiny(300)), seed).unwrap();
    attach_head(backbone, TaskKind::TextClassification, 2).unwrap()
}

/// Per-step losses of `steps` default-configured steps on the toy corpus.
pub fn fit_losses(steps: usize, backend: &dyn Backend) -> Vec<f64> {
    let mut model = toy_classifier(1);
    let config = TrainConfig { epochs: steps.div_ceil(4), ..Default::default() };
    let mut losses = train(&mut model, &toy_corpus(), &config, 1, &mut Sequential { backend }).unwrap().losses;
    losses.truncate(steps);
    losses
}

pub fn max_rel_series(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12)).fold(0.0, f64::max)
}

pub fn reference() -> &'static dyn Backend {
    &Reference
}

/// Forward Fisher-Yates: slot `i` swaps with `i + below(n - i)`.
pub fn fisher_yates(n: usize, seed: u64) -> Vec<i64> {
    let mut v: Vec<i64> = (0..n as i64).collect();
    let mut rng = Rng::new(seed);
    for i in 0..n.saturating_sub(1) {
        let j = i + rng.below((n - i) as u64) as usize;
        v.swap(i, j);
    }
    v
}

/// Serial: produce then consume, 5 ms each. Prefetched: they overlap.
/// Returns prefetched time over serial time.
pub fn prefetch_speedup() -> f64 {
    let slow = || {
        range(20).map(|x| {
            std::thread::sleep(Duration::from_millis(5));
            x
        })
    };
    let consume = |ds: Dataset<i64>| {
        let t = Instant::now();
        for x in ds.iter() {
            x.unwrap();
            std::thread::sleep(Duration::from_millis(5));
        }
        t.elapsed().as_secs_f64()
    };
    let serial = consume(slow());
    let overlapped = consume(slow().prefetch(2).unwrap());
    overlapped / serial
}

pub fn pipeline_of(seed: u64, buffer: usize) -> Dataset<Vec<i64>> {
    range(37).shuffle(buffer, seed).unwrap().map(|x| x * 3 + 1).batch(4, false).unwrap()
}

/// Per-step losses of data-parallel training on the toy corpus, global
/// batch 8, everything else at defaults.
pub fn parallel_losses(workers: usize, steps: usize) -> Vec<f64> {
    let mut model = toy_classifier(1);
    let ds = pipeline::from_vec(toy_corpus());
    let dist = DistributionConfig::new(workers, 8).unwrap();
    let config = TrainConfig { epochs: steps.div_ceil(4), ..Default::default() };
    let mut losses = data_parallel_fit(&mut model, &ds, &config, &dist, reference()).unwrap().losses;
    losses.truncate(steps);
    losses
}

/// Wall time of two data-parallel epochs with `k` workers.
pub fn parallel_wall_time(k: usize) -> f64 {
    let mut model = toy_classifier(1);
    let ds = pipeline::from_vec(toy_corpus());
    let config = TrainConfig { epochs: 2, ..Default::default() };
    let start = Instant::now();
    data_parallel_fit(&mut model, &ds, &config, &DistributionConfig::new(k, 8).unwrap(), &Optimized::with_threads(1)).unwrap();
    start.elapsed().as_secs_f64()
}

/// Mean ms/step of the optimized backend divided by the reference backend on
/// the matmul-dominated model.
pub fn matmul_speed_ratio() -> f64 {
    let model = ModelConfig::matmul_benchmark().build().unwrap();
    let mean = |backend: &str, b: &dyn Backend| {
        let mut spec = BenchSpec::new("matmul256", Phase::Predict, 8, backend);
        spec.steps = 3;
        spec.warmup = 1;
        run_benchmark(&spec, &model, b).unwrap().mean_ms
    };
    let reference_ms = mean("reference", reference());
    let optimized_ms = mean("optimized", &Optimized::new());
    optimized_ms / reference_ms
}
