//! Finite-difference cases for every differentiable op and both backbones.

use std::collections::BTreeMap;

use strata_core::autodiff::gradcheck;
use strata_core::model::{
    attention_bias, convnet_forward, param_specs, transformer_forward, Backbone, BackboneConfig, Bound, ConvnetConfig,
    TransformerConfig,
};
use strata_core::ops::{Ops, Program};
use strata_core::{DType, Reference, Result, Rng, Tensor, UnaryOp};

pub const H: f64 = 1e-4;
pub const TOL: f64 = 1e-4;

fn random(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    Tensor::create(shape, DType::F64, &v).unwrap()
}

/// Values in [0.5, 1.5) or their negation, away from kinks at zero.
fn away_from_zero(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 1.5) * if rng.chance(0.5) { 1.0 } else { -1.0 }).collect();
    Tensor::create(shape, DType::F64, &v).unwrap()
}

fn positive(shape: &[usize], rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.uniform(0.5, 2.0)).collect();
    Tensor::create(shape, DType::F64, &v).unwrap()
}

#[derive(Clone, Copy, Debug)]
enum Case {
    Matmul,
    BatchedMatmul,
    Conv2d { stride: usize, padding: usize },
    Unary(UnaryOp),
    Add,
    Sub,
    Mul,
    Div,
    Sum,
    Mean,
    Max,
    Softmax,
    LogSoftmax,
    Layernorm,
    Gather,
    Transpose,
    Reshape,
    Slice,
    Concat,
    Linear,
}

impl Program for Case {
    fn run<O: Ops>(&self, ops: &mut O, x: &[O::Value]) -> Result<Vec<O::Value>> {
        let y = match *self {
            Case::Matmul | Case::BatchedMatmul => ops.matmul(&x[0], &x[1])?,
            Case::Conv2d { stride, padding } => ops.conv2d(&x[0], &x[1], stride, padding)?,
            Case::Unary(op) => ops.unary(op, &x[0])?,
            Case::Add => ops.add(&x[0], &x[1])?,
            Case::Sub => ops.sub(&x[0], &x[1])?,
            Case::Mul => ops.mul(&x[0], &x[1])?,
            Case::Div => ops.div(&x[0], &x[1])?,
            Case::Sum => ops.sum(&x[0], 1, false)?,
            Case::Mean => ops.mean(&x[0], 0, true)?,
            Case::Max => ops.reduce(strata_core::ReduceOp::Max, &x[0], 1, false)?,
            Case::Softmax => ops.softmax(&x[0], 1)?,
            Case::LogSoftmax => ops.log_softmax(&x[0], 1)?,
            Case::Layernorm => ops.layernorm(&x[0], &x[1], &x[2], 1e-5)?,
            Case::Gather => ops.gather(&x[0], &x[1])?,
            Case::Transpose => ops.transpose(&x[0], &[2, 0, 1])?,
            Case::Reshape => ops.reshape(&x[0], &[6, 2])?,
            Case::Slice => ops.slice(&x[0], 1, 1, 3)?,
            Case::Concat => ops.concat(&[x[0].clone(), x[1].clone()], 0)?,
            Case::Linear => {
                let y = ops.matmul(&x[0], &x[1])?;
                let y = ops.add(&y, &x[2])?;
                ops.gelu(&y)?
            }
        };
        Ok(vec![y])
    }
}

fn inputs(case: Case, rng: &mut Rng) -> Vec<Tensor> {
    match case {
        Case::Matmul => vec![random(&[3, 4], rng), random(&[4, 5], rng)],
        Case::BatchedMatmul => vec![random(&[2, 3, 4], rng), random(&[2, 4, 2], rng)],
        Case::Conv2d { .. } => vec![random(&[2, 5, 5, 2], rng), random(&[3, 3, 2, 3], rng)],
        Case::Unary(UnaryOp::Log) => vec![positive(&[3, 4], rng)],
        Case::Unary(_) => vec![away_from_zero(&[3, 4], rng)],
        Case::Add | Case::Sub | Case::Mul => vec![random(&[3, 4], rng), random(&[4], rng)],
        Case::Div => vec![random(&[3, 4], rng), positive(&[3, 1], rng)],
        Case::Sum | Case::Mean | Case::Max => vec![random(&[3, 5], rng)],
        Case::Softmax | Case::LogSoftmax => vec![random(&[3, 6], rng)],
        Case::Layernorm => vec![random(&[4, 6], rng), random(&[6], rng), random(&[6], rng)],
        Case::Gather => vec![random(&[5, 3], rng), Tensor::from_vec(&[2, 3], vec![0i32, 4, 2, 2, 1, 0]).unwrap()],
        Case::Transpose => vec![random(&[2, 3, 4], rng)],
        Case::Reshape => vec![random(&[3, 4], rng)],
        Case::Slice => vec![random(&[2, 4, 3], rng)],
        Case::Concat => vec![random(&[2, 3], rng), random(&[1, 3], rng)],
        Case::Linear => vec![random(&[3, 4], rng), random(&[4, 5], rng), random(&[5], rng)],
    }
}

const CASES: [Case; 26] = [
    Case::Matmul,
    Case::BatchedMatmul,
    Case::Conv2d { stride: 1, padding: 1 },
    Case::Conv2d { stride: 2, padding: 0 },
    Case::Unary(UnaryOp::Relu),
    Case::Unary(UnaryOp::Gelu),
    Case::Unary(UnaryOp::Exp),
    Case::Unary(UnaryOp::Log),
    Case::Unary(UnaryOp::Neg),
    Case::Add,
    Case::Sub,
    Case::Mul,
    Case::Div,
    Case::Sum,
    Case::Mean,
    Case::Max,
    Case::Softmax,
    Case::LogSoftmax,
    Case::Layernorm,
    Case::Gather,
    Case::Transpose,
    Case::Reshape,
    Case::Slice,
    Case::Concat,
    Case::Linear,
    Case::Linear,
];

/// Parameters arrive as inputs so every one of them is checked.
struct Transformer {
    config: TransformerConfig,
    names: Vec<String>,
}

impl Program for Transformer {
    fn run<O: Ops>(&self, ops: &mut O, x: &[O::Value]) -> Result<Vec<O::Value>> {
        let p: BTreeMap<String, O::Value> = self.names.iter().cloned().zip(x[2..].iter().cloned()).collect();
        Ok(vec![transformer_forward(ops, &self.config, &Bound::new(p), &x[0], &x[1])?])
    }
}

struct Convnet {
    config: ConvnetConfig,
    names: Vec<String>,
}

impl Program for Convnet {
    fn run<O: Ops>(&self, ops: &mut O, x: &[O::Value]) -> Result<Vec<O::Value>> {
        let p: BTreeMap<String, O::Value> = self.names.iter().cloned().zip(x[1..].iter().cloned()).collect();
        Ok(vec![convnet_forward(ops, &self.config, &Bound::new(p), &x[0])?])
    }
}

/// Initial parameters with a small perturbation so biases and gains are not
/// at their degenerate starting values.
fn params(config: &BackboneConfig, rng: &mut Rng) -> (Vec<String>, Vec<Tensor>) {
    let b = Backbone::new(config.clone(), 3).unwrap().to_dtype(DType::F64);
    let names: Vec<String> = param_specs(config).into_iter().map(|s| s.name).collect();
    let values = names
        .iter()
        .map(|n| {
            let t = b.param(n).unwrap();
            let v: Vec<f64> = t.to_f64_vec().iter().map(|x| x + rng.uniform(-0.2, 0.2)).collect();
            Tensor::create(t.shape(), DType::F64, &v).unwrap()
        })
        .collect();
    (names, values)
}

/// Case name, checked element count and max relative error for each op.
pub fn op_errors() -> Vec<(String, usize, f64)> {
    let mut rng = Rng::new(7);
    CASES
        .iter()
        .enumerate()
        .map(|(i, case)| {
            let xs = inputs(*case, &mut rng);
            let r = gradcheck(case, &xs, H, i as u64, &Reference).unwrap();
            (format!("{case:?}"), r.checked, r.max_rel_err)
        })
        .collect()
}

/// Checked count, float input element count and max relative error over a
/// two-layer micro transformer. The attention bias is a float input too and
/// is checked along with the parameters.
pub fn transformer_check() -> (usize, usize, f64) {
    let config = TransformerConfig { vocab: 7, layers: 2, heads: 2, dim: 4, ff_dim: 8, max_len: 4 };
    let mut rng = Rng::new(11);
    let (names, values) = params(&BackboneConfig::TransformerLm(config.clone()), &mut rng);
    let ids = Tensor::from_vec(&[2, 3], vec![1i32, 5, 6, 2, 3, 0]).unwrap();
    let bias = attention_bias(&[1, 1, 1, 1, 1, 0], 2, 3, DType::F64).unwrap();
    let mut xs = vec![ids, bias];
    xs.extend(values);
    let program = Transformer { config, names };
    let r = gradcheck(&program, &xs, H, 1, &Reference).unwrap();
    (r.checked, xs[1..].iter().map(Tensor::numel).sum(), r.max_rel_err)
}

pub fn convnet_check() -> (usize, usize, f64) {
    let config = ConvnetConfig { height: 5, width: 5, in_channels: 3, channels: vec![3, 2] };
    let mut rng = Rng::new(12);
    let (names, values) = params(&BackboneConfig::Convnet(config.clone()), &mut rng);
    let mut xs = vec![random(&[2, 5, 5, 3], &mut rng)];
    xs.extend(values);
    let program = Convnet { config, names };
    let r = gradcheck(&program, &xs, H, 2, &Reference).unwrap();
    (r.checked, xs.iter().map(Tensor::numel).sum(), r.max_rel_err)
}
