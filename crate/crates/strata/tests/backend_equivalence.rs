//! Reference and optimised backends agree on every kernel and on training.

mod common;

use common::*;
use strata::core::model::{Mode, RawInput};
use strata::core::{Backend, DType, Reference, Tensor};
use strata::Optimized;

#[test]
fn kernels_agree_on_random_cases() {
    for threads in [1, 4] {
        for (kernel, worst) in kernel_agreement(100, &Reference, &Optimized::with_threads(threads)) {
            assert!(worst <= 1e-5, "{kernel} with {threads} threads: {worst}");
        }
    }
}

#[test]
fn matmul_is_independent_of_thread_count() {
    for seed in 0..10 {
        let one = kernel_case("matmul", seed, &Optimized::with_threads(1));
        let many = kernel_case("matmul", seed, &Optimized::with_threads(3));
        assert_eq!(one, many);
    }
    let a = Tensor::create(&[200, 300], DType::F32, &(0..60000).map(|i| (i % 17) as f64 - 8.0).collect::<Vec<_>>()).unwrap();
    let b = Tensor::create(&[300, 100], DType::F32, &(0..30000).map(|i| (i % 13) as f64 * 0.1).collect::<Vec<_>>()).unwrap();
    let one = Optimized::with_threads(1).matmul(&a, &b).unwrap();
    assert_eq!(one, Optimized::with_threads(4).matmul(&a, &b).unwrap());
    assert_eq!(one.to_f64_vec(), Reference.matmul(&a, &b).unwrap().to_f64_vec());
}

#[test]
fn shape_errors_match() {
    let a = Tensor::zeros(&[2, 3], DType::F32);
    let b = Tensor::zeros(&[4, 2], DType::F32);
    assert_eq!(Reference.matmul(&a, &b).unwrap_err(), Optimized::new().matmul(&a, &b).unwrap_err());
    let x = Tensor::zeros(&[1, 2, 2, 3], DType::F32);
    let w = Tensor::zeros(&[3, 3, 2, 1], DType::F32);
    assert_eq!(Reference.conv2d(&x, &w, 1, 0).unwrap_err(), Optimized::new().conv2d(&x, &w, 1, 0).unwrap_err());
}

#[test]
fn fit_losses_agree_over_ten_steps() {
    let reference = fit_losses(10, &Reference);
    let optimized = fit_losses(10, &Optimized::with_threads(2));
    assert_eq!(reference.len(), 10);
    let worst = max_rel_series(&reference, &optimized);
    assert!(worst <= 1e-4, "{worst}");
}

#[test]
fn padding_rows_are_stable_across_backends() {
    let model = toy_classifier(4);
    let inputs: Vec<RawInput> = vec!["".into(), "some text".into()];
    let batch = model.encode(&inputs).unwrap();
    let r = model.logits(&batch, &Reference, Mode::Eager).unwrap();
    let o = model.logits(&batch, &Optimized::new(), Mode::Eager).unwrap();
    assert!(max_rel_diff(&r, &o) <= 1e-5);
    let features = |b: &dyn Backend| {
        let ids = Tensor::from_vec(&[1, 4], vec![0i32; 4]).unwrap();
        model.backbone().forward(&ids, None, b, Mode::Eager).unwrap()
    };
    let (fr, fo) = (features(&Reference), features(&Optimized::new()));
    assert!(fr.to_f64_vec().iter().all(|v| v.is_finite()));
    assert!(max_rel_diff(&fr, &fo) <= 1e-5);
}
