//! Execution-agnostic tensor programs.
//!
//! Model code is written once against [`Ops`] and can then run eagerly
//! ([`Eager`]), on a gradient tape ([`crate::autodiff::GradTape`]) or be
//! traced into a graph ([`crate::graph::Tracer`]).

use alloc::vec::Vec;

use crate::{Backend, BinaryOp, DType, ReduceOp, Result, Tensor, UnaryOp};

pub trait Ops {
    type Value: Clone;

    fn constant(&mut self, t: Tensor) -> Result<Self::Value>;

    /// A trainable parameter. Only the tape distinguishes these from constants.
    fn parameter(&mut self, _name: &str, t: &Tensor) -> Result<Self::Value> {
        self.constant(t.clone())
    }

    fn shape(&self, v: &Self::Value) -> Vec<usize>;
    fn dtype(&self, v: &Self::Value) -> DType;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn conv2d(&mut self, x: &Self::Value, w: &Self::Value, stride: usize, padding: usize) -> Result<Self::Value>;
    fn unary(&mut self, op: UnaryOp, x: &Self::Value) -> Result<Self::Value>;
    fn binary(&mut self, op: BinaryOp, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn reduce(&mut self, op: ReduceOp, x: &Self::Value, axis: usize, keep_dim: bool) -> Result<Self::Value>;
    fn softmax(&mut self, x: &Self::Value, axis: usize) -> Result<Self::Value>;
    fn log_softmax(&mut self, x: &Self::Value, axis: usize) -> Result<Self::Value>;
    fn layernorm(&mut self, x: &Self::Value, gamma: &Self::Value, beta: &Self::Value, eps: f64) -> Result<Self::Value>;
    fn gather(&mut self, table: &Self::Value, ids: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, x: &Self::Value, perm: &[usize]) -> Result<Self::Value>;
    fn reshape(&mut self, x: &Self::Value, shape: &[usize]) -> Result<Self::Value>;
    fn slice(&mut self, x: &Self::Value, axis: usize, start: usize, end: usize) -> Result<Self::Value>;
    fn concat(&mut self, xs: &[Self::Value], axis: usize) -> Result<Self::Value>;

    /// Reads a value back to the host. Data-dependent control flow is not
    /// capturable, so the tracer refuses this.
    fn to_host(&mut self, v: &Self::Value) -> Result<Tensor>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(BinaryOp::Add, a, b)
    }
    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(BinaryOp::Sub, a, b)
    }
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(BinaryOp::Mul, a, b)
    }
    fn div(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(BinaryOp::Div, a, b)
    }
    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(UnaryOp::Relu, x)
    }
    fn gelu(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(UnaryOp::Gelu, x)
    }
    fn exp(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(UnaryOp::Exp, x)
    }
    fn log(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(UnaryOp::Log, x)
    }
    fn neg(&mut self, x: &Self::Value) -> Result<Self::Value> {
        self.unary(UnaryOp::Neg, x)
    }
    fn sum(&mut self, x: &Self::Value, axis: usize, keep_dim: bool) -> Result<Self::Value> {
        self.reduce(ReduceOp::Sum, x, axis, keep_dim)
    }
    fn mean(&mut self, x: &Self::Value, axis: usize, keep_dim: bool) -> Result<Self::Value> {
        self.reduce(ReduceOp::Mean, x, axis, keep_dim)
    }

    /// Scalar constant with the same dtype as `like`.
    fn scalar_like(&mut self, value: f64, like: &Self::Value) -> Result<Self::Value> {
        let dtype = self.dtype(like);
        self.constant(Tensor::full(&[], dtype, value))
    }

    /// Sums every element down to a scalar.
    fn sum_all(&mut self, x: &Self::Value) -> Result<Self::Value> {
        let n: usize = self.shape(x).iter().product();
        let flat = self.reshape(x, &[n])?;
        self.sum(&flat, 0, false)
    }
}

/// Runs every op immediately on a backend.
pub struct Eager<'b> {
    backend: &'b dyn Backend,
}

impl<'b> Eager<'b> {
    pub fn new(backend: &'b dyn Backend) -> Self {
        Eager { backend }
    }

    pub fn backend(&self) -> &'b dyn Backend {
        self.backend
    }
}

impl Ops for Eager<'_> {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Result<Tensor> {
        Ok(t)
    }
    fn shape(&self, v: &Tensor) -> Vec<usize> {
        v.shape().to_vec()
    }
    fn dtype(&self, v: &Tensor) -> DType {
        v.dtype()
    }
    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.backend.matmul(a, b)
    }
    fn conv2d(&mut self, x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
        self.backend.conv2d(x, w, stride, padding)
    }
    fn unary(&mut self, op: UnaryOp, x: &Tensor) -> Result<Tensor> {
        self.backend.unary(op, x)
    }
    fn binary(&mut self, op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        self.backend.binary(op, a, b)
    }
    fn reduce(&mut self, op: ReduceOp, x: &Tensor, axis: usize, keep_dim: bool) -> Result<Tensor> {
        self.backend.reduce(op, x, axis, keep_dim)
    }
    fn softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.backend.softmax(x, axis)
    }
    fn log_softmax(&mut self, x: &Tensor, axis: usize) -> Result<Tensor> {
        self.backend.log_softmax(x, axis)
    }
    fn layernorm(&mut self, x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        self.backend.layernorm(x, gamma, beta, eps)
    }
    fn gather(&mut self, table: &Tensor, ids: &Tensor) -> Result<Tensor> {
        self.backend.gather(table, ids)
    }
    fn transpose(&mut self, x: &Tensor, perm: &[usize]) -> Result<Tensor> {
        self.backend.transpose(x, perm)
    }
    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        self.backend.reshape(x, shape)
    }
    fn slice(&mut self, x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        self.backend.slice(x, axis, start, end)
    }
    fn concat(&mut self, xs: &[Tensor], axis: usize) -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        self.backend.concat(&refs, axis)
    }
    fn to_host(&mut self, v: &Tensor) -> Result<Tensor> {
        Ok(v.clone())
    }
}

/// A traceable tensor function: the unit accepted by graph capture.
pub trait Program {
    fn run<O: Ops>(&self, ops: &mut O, inputs: &[O::Value]) -> Result<Vec<O::Value>>;
}

/// Executes a program eagerly.
pub fn run_eager<P: Program + ?Sized>(program: &P, inputs: &[Tensor], backend: &dyn Backend) -> Result<Vec<Tensor>> {
    let mut ops = Eager::new(backend);
    program.run(&mut ops, inputs)
}
