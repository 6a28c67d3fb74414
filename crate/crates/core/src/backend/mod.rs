//! Backend kernel interface.
//!
//! A [`Backend`] is a set of pure kernels over [`Tensor`]s. Every method has a
//! provided implementation backed by [`kernels`], so a backend only overrides
//! what it accelerates. Results from any two backends must agree to 1e-5
//! relative on float32 inputs.

pub mod kernels;

use crate::{Result, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UnaryOp {
    Relu,
    Gelu,
    Exp,
    Log,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
}

impl UnaryOp {
    pub const ALL: [UnaryOp; 5] = [UnaryOp::Relu, UnaryOp::Gelu, UnaryOp::Exp, UnaryOp::Log, UnaryOp::Neg];

    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Relu => "relu",
            UnaryOp::Gelu => "gelu",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Neg => "neg",
        }
    }
}

impl BinaryOp {
    pub const ALL: [BinaryOp; 4] = [BinaryOp::Add, BinaryOp::Sub, BinaryOp::Mul, BinaryOp::Div];

    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
        }
    }
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 3] = [ReduceOp::Sum, ReduceOp::Mean, ReduceOp::Max];

    pub fn name(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Mean => "mean",
            ReduceOp::Max => "max",
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;

    fn matmul(&self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::matmul(a, b).map(|t| t.with_backend(self.name()))
    }

    /// NHWC input, `[kh, kw, cin, cout]` kernel, symmetric zero padding.
    fn conv2d(&self, x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        kernels::conv2d(x, w, stride, padding).map(|t| t.with_backend(self.name()))
    }

    fn unary(&self, op: UnaryOp, x: &Tensor) -> Result<Tensor> {
        kernels::unary(op, x).map(|t| t.with_backend(self.name()))
    }

    fn binary(&self, op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::binary(op, a, b).map(|t| t.with_backend(self.name()))
    }

    fn reduce(&self, op: ReduceOp, x: &Tensor, axis: usize, keep_dim: bool) -> Result<Tensor> {
        kernels::reduce(op, x, axis, keep_dim).map(|t| t.with_backend(self.name()))
    }

    fn softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        kernels::softmax(x, axis).map(|t| t.with_backend(self.name()))
    }

    fn log_softmax(&self, x: &Tensor, axis: usize) -> Result<Tensor> {
        kernels::log_softmax(x, axis).map(|t| t.with_backend(self.name()))
    }

    /// Normalises over the last axis.
    fn layernorm(&self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        kernels::layernorm(x, gamma, beta, eps).map(|t| t.with_backend(self.name()))
    }

    /// Embedding lookup: rows of `table` selected by int32 `ids`.
    fn gather(&self, table: &Tensor, ids: &Tensor) -> Result<Tensor> {
        kernels::gather(table, ids).map(|t| t.with_backend(self.name()))
    }

    fn transpose(&self, x: &Tensor, perm: &[usize]) -> Result<Tensor> {
        kernels::transpose(x, perm).map(|t| t.with_backend(self.name()))
    }

    fn reshape(&self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        kernels::reshape(x, shape).map(|t| t.with_backend(self.name()))
    }

    fn slice(&self, x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        kernels::slice(x, axis, start, end).map(|t| t.with_backend(self.name()))
    }

    fn concat(&self, xs: &[&Tensor], axis: usize) -> Result<Tensor> {
        kernels::concat(xs, axis).map(|t| t.with_backend(self.name()))
    }
}

/// Naive loops with float64 accumulation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Reference;

impl Backend for Reference {
    fn name(&self) -> &'static str {
        "reference"
    }
}
