//! Training entry points, single worker and data parallel.

use std::thread;

use serde::{Deserialize, Serialize};
use strata_core::model::train::{self, shard_gradients, GradientExecutor, Gradients, Sequential, TrainConfig, TrainReport};
use strata_core::model::{Example, TaskModel, TrainBatch};
use strata_core::{Backend, Error as CoreError};

use crate::error::Result;
use crate::pipeline::Dataset;

pub use strata_core::model::train::allreduce_mean as gradient_allreduce_mean;

/// How each global batch is spread over workers. Kept apart from the model
/// and the training config so the same model trains under any layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionConfig {
    pub workers: usize,
    pub global_batch: usize,
}

impl DistributionConfig {
    pub fn new(workers: usize, global_batch: usize) -> Result<Self> {
        let config = DistributionConfig { workers, global_batch };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 || self.global_batch == 0 {
            return Err(CoreError::Config("workers and global batch must be at least 1".into()).into());
        }
        if self.global_batch % self.workers != 0 {
            return Err(CoreError::Config(format!(
                "global batch {} is not divisible by {} workers",
                self.global_batch, self.workers
            ))
            .into());
        }
        Ok(())
    }

    pub fn per_worker_batch(&self) -> usize {
        self.global_batch / self.workers
    }
}

/// One thread per shard; results come back in worker order.
pub struct Threaded<'b> {
    pub backend: &'b dyn Backend,
}

impl GradientExecutor for Threaded<'_> {
    fn run(&mut self, model: &TaskModel, shards: &[TrainBatch], scale: f64) -> strata_core::Result<Vec<(f64, Gradients)>> {
        if shards.len() == 1 {
            return Ok(vec![shard_gradients(model, &shards[0], scale, self.backend)?]);
        }
        let backend = self.backend;
        thread::scope(|s| {
            let handles: Vec<_> = shards.iter().map(|shard| s.spawn(move || shard_gradients(model, shard, scale, backend))).collect();
            handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
        })
    }
}

/// Trains on every element of `ds` for `config.epochs` epochs on one worker.
pub fn fit(model: &mut TaskModel, ds: &Dataset<Example>, config: &TrainConfig, backend: &dyn Backend) -> Result<TrainReport> {
    let examples = ds.collect()?;
    Ok(train::train(model, &examples, config, 1, &mut Sequential { backend })?)
}

/// Data-parallel training: each global batch of `dist.global_batch` examples
/// is cut into `dist.workers` contiguous shards whose gradients are computed
/// on separate threads, averaged in worker order, then applied once.
pub fn data_parallel_fit(
    model: &mut TaskModel,
    ds: &Dataset<Example>,
    config: &TrainConfig,
    dist: &DistributionConfig,
    backend: &dyn Backend,
) -> Result<TrainReport> {
    dist.validate()?;
    let examples = ds.collect()?;
    let config = TrainConfig { batch_size: dist.global_batch, ..config.clone() };
    Ok(train::train(model, &examples, &config, dist.workers, &mut Threaded { backend })?)
}
