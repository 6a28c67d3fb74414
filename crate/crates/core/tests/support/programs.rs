//! Random traced programs and the fusion chain.

use std::time::Instant;

use proptest::prelude::*;
use strata_core::graph::{capture, eliminate_dead_code, execute, fold_constants, optimize, TensorSpec};
use strata_core::ops::{Ops, Program};
use strata_core::{BinaryOp, DType, Reference, Result, Rng, Tensor, UnaryOp};

#[derive(Debug, Clone)]
pub enum Instr {
    Unary(UnaryOp, usize),
    Binary(BinaryOp, usize, usize),
    /// `a op (c1 + c2)` with both constants known at capture time.
    ConstExpr(BinaryOp, usize, f32, f32),
    Matmul(usize),
    SumKeep(usize),
    Softmax(usize),
    Layernorm(usize),
}

#[derive(Debug, Clone)]
pub struct Random {
    instrs: Vec<Instr>,
    extra_output: usize,
}

impl Program for Random {
    fn run<O: Ops>(&self, ops: &mut O, x: &[O::Value]) -> Result<Vec<O::Value>> {
        // x[0]: [4, 6], x[1]: [6], x[2]: [6, 6]
        let mut pool = vec![x[0].clone(), x[1].clone()];
        let pick = |pool: &Vec<O::Value>, i: usize| pool[i % pool.len()].clone();
        for ins in &self.instrs {
            let v = match ins {
                Instr::Unary(op, a) => {
                    let a = pick(&pool, *a);
                    match op {
                        // Keep log and exp finite: log(exp(a) + 1) and exp of a squashed value.
                        UnaryOp::Log => {
                            let e = ops.exp(&a)?;
                            let one = ops.scalar_like(1.0, &e)?;
                            let s = ops.add(&e, &one)?;
                            ops.log(&s)?
                        }
                        UnaryOp::Exp => {
                            let r = ops.relu(&a)?;
                            let n = ops.neg(&r)?;
                            ops.exp(&n)?
                        }
                        _ => ops.unary(*op, &a)?,
                    }
                }
                Instr::Binary(op, a, b) => {
                    let a = pick(&pool, *a);
                    let b = pick(&pool, *b);
                    if *op == BinaryOp::Div {
                        let one = ops.scalar_like(1.0, &b)?;
                        let sq = ops.mul(&b, &b)?;
                        let d = ops.add(&sq, &one)?;
                        ops.div(&a, &d)?
                    } else {
                        ops.binary(*op, &a, &b)?
                    }
                }
                Instr::ConstExpr(op, a, c1, c2) => {
                    let a = pick(&pool, *a);
                    let c1 = ops.constant(Tensor::scalar(*c1))?;
                    let c2 = ops.constant(Tensor::scalar(*c2))?;
                    let c = ops.add(&c1, &c2)?;
                    ops.binary(*op, &a, &c)?
                }
                Instr::Matmul(a) => {
                    let a = pick(&pool, *a);
                    if ops.shape(&a).len() == 2 && ops.shape(&a)[1] == 6 {
                        ops.matmul(&a, &x[2])?
                    } else {
                        continue;
                    }
                }
                Instr::SumKeep(a) => {
                    let a = pick(&pool, *a);
                    let axis = ops.shape(&a).len() - 1;
                    ops.sum(&a, axis, true)?
                }
                Instr::Softmax(a) => {
                    let a = pick(&pool, *a);
                    let axis = ops.shape(&a).len() - 1;
                    ops.softmax(&a, axis)?
                }
                Instr::Layernorm(a) => {
                    let a = pick(&pool, *a);
                    if *ops.shape(&a).last().unwrap() != 6 {
                        continue;
                    }
                    ops.layernorm(&a, &x[1], &x[1], 1e-5)?
                }
            };
            pool.push(v);
        }
        let last = pool.last().unwrap().clone();
        Ok(vec![last, pick(&pool, self.extra_output)])
    }
}

fn unary() -> impl Strategy<Value = UnaryOp> {
    prop_oneof![Just(UnaryOp::Relu), Just(UnaryOp::Gelu), Just(UnaryOp::Exp), Just(UnaryOp::Log), Just(UnaryOp::Neg)]
}

fn binary() -> impl Strategy<Value = BinaryOp> {
    prop_oneof![Just(BinaryOp::Add), Just(BinaryOp::Sub), Just(BinaryOp::Mul), Just(BinaryOp::Div)]
}

fn instr() -> impl Strategy<Value = Instr> {
    let i = 0usize..32;
    prop_oneof![
        4 => (unary(), i.clone()).prop_map(|(op, a)| Instr::Unary(op, a)),
        4 => (binary(), i.clone(), i.clone()).prop_map(|(op, a, b)| Instr::Binary(op, a, b)),
        1 => (prop_oneof![Just(BinaryOp::Add), Just(BinaryOp::Mul)], i.clone(), -2.0f32..2.0, -2.0f32..2.0)
            .prop_map(|(op, a, c1, c2)| Instr::ConstExpr(op, a, c1, c2)),
        1 => i.clone().prop_map(Instr::Matmul),
        1 => i.clone().prop_map(Instr::SumKeep),
        1 => i.clone().prop_map(Instr::Softmax),
        1 => i.prop_map(Instr::Layernorm),
    ]
}

pub fn program() -> impl Strategy<Value = Random> {
    (prop::collection::vec(instr(), 1..14), 0usize..32).prop_map(|(instrs, extra_output)| Random { instrs, extra_output })
}

pub fn specs() -> Vec<TensorSpec> {
    vec![TensorSpec::new(&[4, 6], DType::F32), TensorSpec::new(&[6], DType::F32), TensorSpec::new(&[6, 6], DType::F32)]
}

pub fn random_inputs(seed: u64) -> Vec<Tensor> {
    let mut rng = Rng::new(seed);
    specs()
        .iter()
        .map(|s| {
            let shape = s.static_shape().unwrap();
            let n: usize = shape.iter().product();
            let v: Vec<f64> = (0..n).map(|_| rng.uniform(-1.5, 1.5)).collect();
            Tensor::create(&shape, DType::F32, &v).unwrap()
        })
        .collect()
}

pub fn max_abs_diff(a: &[Tensor], b: &[Tensor]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut worst = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        assert_eq!(x.shape(), y.shape());
        for (p, q) in x.to_f64_vec().iter().zip(y.to_f64_vec()) {
            if p.to_bits() != q.to_bits() {
                worst = worst.max((p - q).abs());
            }
        }
    }
    worst
}

pub struct Chain;

impl Program for Chain {
    fn run<O: Ops>(&self, ops: &mut O, x: &[O::Value]) -> Result<Vec<O::Value>> {
        let s = ops.add(&x[0], &x[1])?;
        let p = ops.mul(&s, &x[2])?;
        let r = ops.relu(&p)?;
        Ok(vec![ops.exp(&r)?])
    }
}

#[test]
fn chain_fusion_reduces_nodes() {
    let g = capture(&Chain, &vec![TensorSpec::new(&[16], DType::F32); 3]).unwrap();
    let o = optimize(g.clone()).unwrap();
    assert_eq!((g.node_count(), o.node_count()), (7, 4));
    let reduction = 1.0 - o.node_count() as f64 / g.node_count() as f64;
    assert!(reduction >= 0.4, "{reduction}");
    assert_eq!(o.fusion_group_count(), 1);
}

fn fastest(runs: usize, mut f: impl FnMut()) -> f64 {
    (0..runs)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Fastest of several runs, unfused over fused, on a 2^20-element chain.
pub fn fusion_speedup() -> f64 {
    let n = 1 << 20;
    let g = capture(&Chain, &vec![TensorSpec::new(&[n], DType::F32); 3]).unwrap();
    let unfused = eliminate_dead_code(fold_constants(g.clone()).unwrap()).unwrap();
    let fused = optimize(g).unwrap();
    let xs = random_inputs_of(n, 3);
    assert_eq!(execute(&unfused, &xs, &Reference).unwrap(), execute(&fused, &xs, &Reference).unwrap());
    let slow = fastest(5, || {
        execute(&unfused, &xs, &Reference).unwrap();
    });
    let fast = fastest(5, || {
        execute(&fused, &xs, &Reference).unwrap();
    });
    slow / fast
}

fn random_inputs_of(n: usize, count: usize) -> Vec<Tensor> {
    let mut rng = Rng::new(5);
    (0..count)
        .map(|_| Tensor::from_vec(&[n], (0..n).map(|_| rng.uniform(-1.0, 1.0) as f32).collect()).unwrap())
        .collect()
}


/// Node counts before and after optimising the chain.
pub fn chain_node_counts() -> (usize, usize) {
    let g = capture(&Chain, &vec![TensorSpec::new(&[16], DType::F32); 3]).unwrap();
    let o = optimize(g.clone()).unwrap();
    (g.node_count(), o.node_count())
}

/// Worst `|execute(optimize(g)) - execute(g)|` over `cases` random programs,
/// and whether every captured run matched eager execution bitwise.
pub fn optimize_agreement(cases: u32) -> (f64, bool) {
    use proptest::strategy::ValueTree;
    use proptest::test_runner::{Config, TestRunner};
    use strata_core::ops::run_eager;
    let mut runner = TestRunner::new(Config { cases, ..Config::default() });
    let mut worst = 0.0f64;
    let mut bitwise = true;
    let strategy = (program(), any::<u64>());
    for _ in 0..cases {
        let (p, seed) = strategy.new_tree(&mut runner).unwrap().current();
        let g = capture(&p, &specs()).unwrap();
        let xs = random_inputs(seed);
        let plain = execute(&g, &xs, &Reference).unwrap();
        bitwise &= plain == run_eager(&p, &xs, &Reference).unwrap();
        worst = worst.max(max_abs_diff(&plain, &execute(&optimize(g).unwrap(), &xs, &Reference).unwrap()));
    }
    (worst, bitwise)
}
