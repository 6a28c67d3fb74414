//! Captured and optimised graphs against eager execution.

mod support;

use proptest::prelude::*;
use strata_core::graph::{capture, eliminate_dead_code, execute, fold_constants, optimize, TensorSpec};
use strata_core::ops::{run_eager, Ops, Program};
use strata_core::{DType, Reference, Result, Rng, Tensor};
use support::programs::{chain_node_counts, fusion_speedup, max_abs_diff, program, random_inputs, specs, Chain};

proptest! {
    #![proptest_config(ProptestConfig { cases: 50, ..ProptestConfig::default() })]

    #[test]
    fn optimize_preserves_semantics(p in program(), seed in any::<u64>()) {
        let g = capture(&p, &specs()).unwrap();
        let xs = random_inputs(seed);
        let plain = execute(&g, &xs, &Reference).unwrap();
        prop_assert_eq!(&plain, &run_eager(&p, &xs, &Reference).unwrap());
        let before = g.node_count();
        let o = optimize(g).unwrap();
        prop_assert!(o.node_count() <= before);
        let optimized = execute(&o, &xs, &Reference).unwrap();
        prop_assert!(max_abs_diff(&plain, &optimized) <= 1e-6);
        let again = optimize(o.clone()).unwrap();
        prop_assert_eq!(again.node_count(), o.node_count());
    }

    #[test]
    fn folding_and_dce_are_bitwise(p in program(), seed in any::<u64>()) {
        let g = capture(&p, &specs()).unwrap();
        let xs = random_inputs(seed);
        let plain = execute(&g, &xs, &Reference).unwrap();
        let reduced = eliminate_dead_code(fold_constants(g).unwrap()).unwrap();
        prop_assert_eq!(plain, execute(&reduced, &xs, &Reference).unwrap());
    }

    #[test]
    fn captured_mlp_is_bitwise_eager(
        batch in 1usize..6,
        widths in prop::collection::vec(1usize..9, 2..5),
        seed in any::<u64>(),
    ) {
        let mlp = Mlp { layers: widths.len() - 1 };
        let mut rng = Rng::new(seed);
        let mut xs = vec![];
        let mut specs = vec![];
        let mut push = |shape: Vec<usize>, rng: &mut Rng| {
            let n: usize = shape.iter().product();
            let v: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            specs.push(TensorSpec::new(&shape, DType::F32));
            xs.push(Tensor::create(&shape, DType::F32, &v).unwrap());
        };
        push(vec![batch, widths[0]], &mut rng);
        for w in widths.windows(2) {
            push(vec![w[0], w[1]], &mut rng);
            push(vec![w[1]], &mut rng);
        }
        let g = capture(&mlp, &specs).unwrap();
        let eager = run_eager(&mlp, &xs, &Reference).unwrap();
        prop_assert_eq!(&execute(&g, &xs, &Reference).unwrap(), &eager);
        let optimized = execute(&optimize(g).unwrap(), &xs, &Reference).unwrap();
        prop_assert!(max_abs_diff(&eager, &optimized) < 1e-6);
    }
}

struct Mlp {
    layers: usize,
}

impl Program for Mlp {
    fn run<O: Ops>(&self, ops: &mut O, x: &[O::Value]) -> Result<Vec<O::Value>> {
        let mut h = x[0].clone();
        for i in 0..self.layers {
            let y = ops.matmul(&h, &x[1 + 2 * i])?;
            let y = ops.add(&y, &x[2 + 2 * i])?;
            h = if i + 1 < self.layers { ops.relu(&y)? } else { y };
        }
        Ok(vec![h])
    }
}

#[test]
fn chain_fusion_reduces_nodes() {
    let (before, after) = chain_node_counts();
    assert_eq!((before, after), (7, 4));
    let reduction = 1.0 - after as f64 / before as f64;
    assert!(reduction >= 0.4, "{reduction}");
    let o = optimize(capture(&Chain, &vec![TensorSpec::new(&[16], DType::F32); 3]).unwrap()).unwrap();
    assert_eq!(o.fusion_group_count(), 1);
}

#[test]
fn fused_chain_is_faster() {
    let speedup = fusion_speedup();
    println!("fusion speedup {speedup:.2}x");
    assert!(speedup >= 1.3, "speedup {speedup:.2}");
}

#[test]
fn random_program_sweep() {
    let (worst, bitwise) = support::programs::optimize_agreement(20);
    assert!(bitwise);
    assert!(worst <= 1e-6, "{worst}");
}
