//! Fused elementwise kernels.
//!
//! A fused group evaluates its member ops chunk by chunk so intermediates
//! stay in a small scratch buffer instead of full-size tensors. Each element
//! goes through exactly the same scalar operations as the unfused graph.

use alloc::vec;
use alloc::vec::Vec;

use crate::backend::kernels::{self, float_op};
use crate::tensor::{shape, Storage};
use crate::{BinaryOp, Error, Real, Result, Tensor, UnaryOp};
use alloc::format;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Unary(UnaryOp),
    Binary(BinaryOp),
}

impl ElementwiseOp {
    pub fn name(self) -> &'static str {
        match self {
            ElementwiseOp::Unary(u) => u.name(),
            ElementwiseOp::Binary(b) => b.name(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    /// External input of the fused node.
    Input(usize),
    /// Result of an earlier step.
    Step(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedStep {
    pub op: ElementwiseOp,
    pub args: Vec<Operand>,
}

/// Steps in evaluation order; the last step is the group output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedKernel {
    pub steps: Vec<FusedStep>,
}

const CHUNK: usize = 512;

#[derive(Clone, Copy)]
enum Src<'a, F> {
    Slice(&'a [F]),
    Scalar(F),
}

impl FusedKernel {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn run(&self, inputs: &[&Tensor], out_shape: &[usize]) -> Result<Tensor> {
        let first = inputs.first().ok_or_else(|| Error::Shape("fused kernel without inputs".into()))?;
        // Inputs that are neither full-size nor scalar are expanded up front.
        let expanded: Vec<Option<Tensor>> = inputs
            .iter()
            .map(|t| if t.shape() == out_shape || t.numel() == 1 { Ok(None) } else { kernels::broadcast_to(t, out_shape).map(Some) })
            .collect::<Result<_>>()?;
        float_op!(first, "fused", |_v: F| {
            let mut views = Vec::with_capacity(inputs.len());
            for (t, e) in inputs.iter().zip(&expanded) {
                let t = e.as_ref().unwrap_or(t);
                let data = t.data::<F>()?;
                views.push(if t.shape() == out_shape { Src::Slice(data) } else { Src::Scalar(data[0]) });
            }
            Tensor::from_vec(out_shape, self.eval::<F>(&views, shape::numel(out_shape)))
        })
    }

    fn eval<F: Real>(&self, inputs: &[Src<'_, F>], n: usize) -> Vec<F> {
        let mut out = vec![F::ZERO; n];
        let mut scratch = vec![F::ZERO; self.steps.len() * CHUNK];
        let last = self.steps.len() - 1;
        let mut start = 0;
        while start < n {
            let len = CHUNK.min(n - start);
            for (s, step) in self.steps.iter().enumerate() {
                let (done, rest) = scratch.split_at_mut(s * CHUNK);
                let dst = &mut rest[..len];
                let src = |op: Operand| -> Src<'_, F> {
                    match op {
                        Operand::Input(i) => match inputs[i] {
                            Src::Slice(v) => Src::Slice(&v[start..start + len]),
                            scalar => scalar,
                        },
                        Operand::Step(j) => Src::Slice(&done[j * CHUNK..j * CHUNK + len]),
                    }
                };
                match step.op {
                    ElementwiseOp::Unary(op) => match op {
                        UnaryOp::Relu => unary_into(dst, src(step.args[0]), |x| UnaryOp::Relu.apply(x)),
                        UnaryOp::Gelu => unary_into(dst, src(step.args[0]), |x| UnaryOp::Gelu.apply(x)),
                        UnaryOp::Exp => unary_into(dst, src(step.args[0]), |x| UnaryOp::Exp.apply(x)),
                        UnaryOp::Log => unary_into(dst, src(step.args[0]), |x| UnaryOp::Log.apply(x)),
                        UnaryOp::Neg => unary_into(dst, src(step.args[0]), |x| UnaryOp::Neg.apply(x)),
                    },
                    ElementwiseOp::Binary(op) => {
                        let (a, b) = (src(step.args[0]), src(step.args[1]));
                        match op {
                            BinaryOp::Add => binary_into(dst, a, b, |x, y| BinaryOp::Add.apply(x, y)),
                            BinaryOp::Sub => binary_into(dst, a, b, |x, y| BinaryOp::Sub.apply(x, y)),
                            BinaryOp::Mul => binary_into(dst, a, b, |x, y| BinaryOp::Mul.apply(x, y)),
                            BinaryOp::Div => binary_into(dst, a, b, |x, y| BinaryOp::Div.apply(x, y)),
                        }
                    }
                }
            }
            out[start..start + len].copy_from_slice(&scratch[last * CHUNK..last * CHUNK + len]);
            start += len;
        }
        out
    }
}


// Called with a constant op per closure so each loop is specialised.
#[inline(always)]
fn unary_into<F: Copy>(dst: &mut [F], a: Src<'_, F>, f: impl Fn(F) -> F) {
    match a {
        Src::Slice(a) => dst.iter_mut().zip(a).for_each(|(d, &x)| *d = f(x)),
        Src::Scalar(x) => dst.fill(f(x)),
    }
}

#[inline(always)]
fn binary_into<F: Copy>(dst: &mut [F], a: Src<'_, F>, b: Src<'_, F>, f: impl Fn(F, F) -> F) {
    match (a, b) {
        (Src::Slice(a), Src::Slice(b)) => dst.iter_mut().zip(a.iter().zip(b)).for_each(|(d, (&x, &y))| *d = f(x, y)),
        (Src::Slice(a), Src::Scalar(y)) => dst.iter_mut().zip(a).for_each(|(d, &x)| *d = f(x, y)),
        (Src::Scalar(x), Src::Slice(b)) => dst.iter_mut().zip(b).for_each(|(d, &y)| *d = f(x, y)),
        (Src::Scalar(x), Src::Scalar(y)) => dst.fill(f(x, y)),
    }
}
