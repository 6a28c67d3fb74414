//! Losses, optimisers and the training loop shared by single- and
//! multi-worker training.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use super::task::{Example, TaskModel, TrainBatch};
use crate::{Error, Result, Rng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::adam(1e-3)
    }
}

/// Every field has a default, so `TrainConfig::default()` trains out of the box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Reorders examples every epoch with a generator derived from `seed`.
    pub shuffle: bool,
    pub drop_remainder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 1, batch_size: 8, optimizer: Optimizer::default(), seed: 0, shuffle: true, drop_remainder: false }
    }
}

/// One loss per optimiser step.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.losses.len()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.losses.last().copied()
    }

    /// `step,loss` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (i, l) in self.losses.iter().enumerate() {
            let _ = writeln!(out, "{},{:?}", i, l);
        }
        out
    }
}

pub type Gradients = BTreeMap<String, Tensor>;

/// Elementwise mean of per-worker gradients, summed in worker order at f64.
pub fn allreduce_mean(grads: &[Gradients]) -> Result<Gradients> {
    let first = grads.first().ok_or_else(|| Error::Shape("no gradients to reduce".into()))?;
    let k = grads.len() as f64;
    let mut out = BTreeMap::new();
    for (name, g0) in first {
        let mut acc = alloc::vec![0.0f64; g0.numel()];
        for (w, g) in grads.iter().enumerate() {
            let t = g.get(name).ok_or_else(|| Error::Shape(format!("worker {} has no gradient for {}", w, name)))?;
            if t.shape() != g0.shape() || t.dtype() != g0.dtype() {
                return Err(Error::Shape(format!("worker {} gradient for {} is {:?}, expected {:?}", w, name, t.shape(), g0.shape())));
            }
            acc.iter_mut().zip(t.to_f64_vec()).for_each(|(a, x)| *a += x);
        }
        acc.iter_mut().for_each(|a| *a /= k);
        out.insert(name.clone(), Tensor::create(g0.shape(), g0.dtype(), &acc)?);
    }
    if let Some((w, g)) = grads.iter().enumerate().find(|(_, g)| g.len() != first.len()) {
        return Err(Error::Shape(format!("worker {} reports {} gradients, worker 0 reports {}", w, g.len(), first.len())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimiser state, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    optimizer: Optimizer,
    step: u64,
    moments: BTreeMap<String, Moments>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer) -> Self {
        OptimizerState { optimizer, step: 0, moments: BTreeMap::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn apply(&mut self, model: &mut TaskModel, grads: &Gradients) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        for (name, g) in grads {
            let p = model.param(name).ok_or_else(|| Error::Config(format!("gradient for unknown parameter {}", name)))?;
            let (pv, gv) = (p.to_f64_vec(), g.to_f64_vec());
            let updated: Vec<f64> = match self.optimizer {
                Optimizer::Sgd { lr } => pv.iter().zip(&gv).map(|(p, g)| p - lr * g).collect(),
                Optimizer::Adam { lr, beta1, beta2, eps } => {
                    let st = self.moments.entry(name.clone()).or_default();
                    if st.m.is_empty() {
                        st.m = alloc::vec![0.0; pv.len()];
                        st.v = alloc::vec![0.0; pv.len()];
                    }
                    let (c1, c2) = (1.0 - libm::pow(beta1, t as f64), 1.0 - libm::pow(beta2, t as f64));
                    pv.iter()
                        .enumerate()
                        .map(|(i, p)| {
                            let g = gv[i];
                            st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                            st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                            p - lr * (st.m[i] / c1) / (libm::sqrt(st.v[i] / c2) + eps)
                        })
                        .collect()
                }
            };
            let value = Tensor::create(p.shape(), p.dtype(), &updated)?;
            model.set_param(name, value)?;
        }
        Ok(())
    }
}

/// Computes `(loss, gradients)` for each shard of a step, given the scale
/// that makes shard losses average to the global loss.
pub trait GradientExecutor {
    fn run(&mut self, model: &TaskModel, shards: &[TrainBatch], scale: f64) -> Result<Vec<(f64, Gradients)>>;
}

/// Evaluates shards one after another on the calling thread.
pub struct Sequential<'b> {
    pub backend: &'b dyn crate::Backend,
}

impl GradientExecutor for Sequential<'_> {
    fn run(&mut self, model: &TaskModel, shards: &[TrainBatch], scale: f64) -> Result<Vec<(f64, Gradients)>> {
        shards.iter().map(|s| shard_gradients(model, s, scale, self.backend)).collect()
    }
}

/// Gradients of one shard; an empty shard contributes zeros.
pub fn shard_gradients(model: &TaskModel, shard: &TrainBatch, scale: f64, backend: &dyn crate::Backend) -> Result<(f64, Gradients)> {
    if shard.rows() == 0 {
        let zeros = model.params().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape(), t.dtype()))).collect();
        return Ok((0.0, zeros));
    }
    model.gradients(shard, scale, backend)
}

/// The order examples are visited in during `epoch`.
pub fn epoch_order(n: usize, epoch: usize, config: &TrainConfig) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if config.shuffle {
        let mut rng = Rng::new(config.seed).derive(epoch as u64);
        for i in 0..n.saturating_sub(1) {
            let j = i + rng.below((n - i) as u64) as usize;
            order.swap(i, j);
        }
    }
    order
}

/// One optimiser step on a prepared global batch split across `workers`
/// shards. Returns the global-batch loss.
pub fn train_step(
    model: &mut TaskModel,
    state: &mut OptimizerState,
    batch: &TrainBatch,
    workers: usize,
    executor: &mut dyn GradientExecutor,
) -> Result<f64> {
    let terms = batch.loss_terms();
    if terms == 0 {
        return Err(Error::Data("batch has nothing to predict".into()));
    }
    let shards = batch.split(workers)?;
    let results = executor.run(model, &shards, workers as f64 / terms as f64)?;
    let loss = results.iter().map(|(l, _)| l).sum::<f64>() / workers as f64;
    if !loss.is_finite() {
        return Err(Error::TrainingDiverged { step: state.steps() as usize });
    }
    let grads: Vec<Gradients> = results.into_iter().map(|(_, g)| g).collect();
    let mean = if workers == 1 { grads.into_iter().next().expect("one worker") } else { allreduce_mean(&grads)? };
    state.apply(model, &mean)?;
    Ok(loss)
}

/// Runs `config.epochs` epochs of mini-batch training with each global batch
/// split into `workers` contiguous shards.
pub fn train(
    model: &mut TaskModel,
    examples: &[Example],
    config: &TrainConfig,
    workers: usize,
    executor: &mut dyn GradientExecutor,
) -> Result<TrainReport> {
    if examples.is_empty() {
        return Err(Error::Data("cannot train on an empty dataset".into()));
    }
    if config.batch_size == 0 || workers == 0 {
        return Err(Error::Config("batch size and worker count must be at least 1".into()));
    }
    let mut state = OptimizerState::new(config.optimizer);
    let mut report = TrainReport::default();
    for epoch in 0..config.epochs {
        let order = epoch_order(examples.len(), epoch, config);
        for chunk in order.chunks(config.batch_size) {
            if config.drop_remainder && chunk.len() < config.batch_size {
                continue;
            }
            let batch: Vec<Example> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let prepared = model.prepare(&batch)?;
            report.losses.push(train_step(model, &mut state, &prepared, workers, executor)?);
        }
    }
    Ok(report)
}
