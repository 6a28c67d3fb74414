mod common;

use std::collections::BTreeMap;

use strata::core::model::train::TrainConfig;
use strata::core::{Error as CoreError, Tensor};
use strata::distribute::{data_parallel_fit, fit, gradient_allreduce_mean, DistributionConfig};
use strata::pipeline;
use strata::{Error, Optimized};

use common::{max_rel_series, parallel_losses, parallel_wall_time, reference, toy_classifier, toy_corpus};

const STEPS: usize = 50;

fn config() -> TrainConfig {
    // 32 examples in batches of 8: four steps per epoch.
    TrainConfig { epochs: STEPS.div_ceil(4), ..Default::default() }
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn one_worker_is_bitwise_fit() {
    let mut model = toy_classifier(1);
    let mut single = fit(&mut model, &pipeline::from_vec(toy_corpus()), &config(), reference()).unwrap().losses;
    single.truncate(STEPS);
    let parallel = parallel_losses(1, STEPS);
    assert_eq!(single.len(), STEPS);
    assert!(single.iter().zip(&parallel).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn workers_track_single_worker_losses() {
    let single = parallel_losses(1, STEPS);
    for k in [2, 4] {
        let losses = parallel_losses(k, STEPS);
        assert_eq!(losses.len(), STEPS);
        let diff = max_abs(&single, &losses);
        println!("k={k}: max abs loss diff {diff:.3e}, max rel {:.3e}", max_rel_series(&single, &losses));
        assert!(diff < 1e-6, "k={k} drifts by {diff}");
    }
}

#[test]
fn parameters_end_close() {
    let mut a = toy_classifier(1);
    let mut b = toy_classifier(1);
    let ds = pipeline::from_vec(toy_corpus());
    let config = TrainConfig { epochs: 3, ..Default::default() };
    data_parallel_fit(&mut a, &ds, &config, &DistributionConfig::new(1, 8).unwrap(), reference()).unwrap();
    data_parallel_fit(&mut b, &ds, &config, &DistributionConfig::new(4, 8).unwrap(), &Optimized::with_threads(1)).unwrap();
    for ((k, x), (_, y)) in a.params().zip(b.params()) {
        let d = x.max_abs_diff(y).unwrap();
        assert!(d < 1e-5, "{k} differs by {d}");
    }
}

#[test]
fn indivisible_batches_are_config_errors() {
    for (k, b) in [(3, 8), (0, 8), (2, 0), (5, 4)] {
        let err = DistributionConfig::new(k, b).unwrap_err();
        assert!(matches!(err, Error::Core(CoreError::Config(_))), "{k} {b}: {err}");
    }
    let mut model = toy_classifier(0);
    let dist = DistributionConfig { workers: 3, global_batch: 8 };
    let err = data_parallel_fit(&mut model, &pipeline::from_vec(toy_corpus()), &config(), &dist, reference()).unwrap_err();
    assert!(matches!(err, Error::Core(CoreError::Config(_))));
    assert_eq!(DistributionConfig::new(4, 8).unwrap().per_worker_batch(), 2);
}

fn grads(values: &[f64]) -> BTreeMap<String, Tensor> {
    BTreeMap::from([("w".to_string(), Tensor::from_vec(&[values.len()], values.to_vec()).unwrap())])
}

#[test]
fn allreduce_examples() {
    let out = gradient_allreduce_mean(&[grads(&[1.0, 2.0]), grads(&[3.0, 6.0])]).unwrap();
    assert_eq!(out["w"].to_f64_vec(), [2.0, 4.0]);
    let out = gradient_allreduce_mean(&[grads(&[1.0, -1.0, 0.5])]).unwrap();
    assert_eq!(out["w"].to_f64_vec(), [1.0, -1.0, 0.5]);
    let out = gradient_allreduce_mean(&[grads(&[0.0]), grads(&[1.0]), grads(&[2.0]), grads(&[5.0])]).unwrap();
    assert_eq!(out["w"].to_f64_vec(), [2.0]);
    assert!(gradient_allreduce_mean(&[grads(&[1.0]), grads(&[1.0, 2.0])]).is_err());
    assert!(gradient_allreduce_mean(&[]).is_err());
}

#[test]
fn four_workers_are_faster_with_four_cores() {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    if cores < 4 {
        println!("k=4 timing: N/A ({cores} hardware threads)");
        return;
    }
    let t1 = parallel_wall_time(1);
    let t4 = parallel_wall_time(4);
    println!("k=4 / k=1 wall time {:.3}", t4 / t1);
    assert!(t4 < 0.5 * t1);
}
