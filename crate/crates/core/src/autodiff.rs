//! Tape-based reverse-mode differentiation.
//!
//! [`GradTape`] implements [`Ops`]: every op is executed immediately on the
//! backend and, when any input needs a gradient, appended to the tape.
//! [`GradTape::backward`] walks the records once in reverse.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use crate::backend::kernels;
use crate::error::shape_err;
use crate::ops::{run_eager, Ops, Program};
use crate::{Backend, BinaryOp, DType, Error, ReduceOp, Result, Rng, Tensor, UnaryOp};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TensorId {
    tape: u64,
    index: usize,
}

impl TensorId {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Debug, Clone)]
enum TapeOp {
    MatMul,
    Conv2d { stride: usize, padding: usize },
    Unary(UnaryOp),
    Binary(BinaryOp),
    Reduce { op: ReduceOp, axis: usize },
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    LayerNorm { eps: f64 },
    Gather,
    Transpose { perm: Vec<usize> },
    Reshape,
    Slice { axis: usize, start: usize },
    Concat { axis: usize },
}

#[derive(Debug)]
struct Record {
    op: TapeOp,
    inputs: Vec<usize>,
    output: usize,
}

pub struct GradTape<'b> {
    id: u64,
    backend: &'b dyn Backend,
    values: Vec<Tensor>,
    requires_grad: Vec<bool>,
    records: Vec<Record>,
    watched: Vec<usize>,
    parameters: BTreeMap<String, TensorId>,
}

impl<'b> GradTape<'b> {
    pub fn new(backend: &'b dyn Backend) -> Self {
        GradTape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            backend,
            values: Vec::new(),
            requires_grad: Vec::new(),
            records: Vec::new(),
            watched: Vec::new(),
            parameters: BTreeMap::new(),
        }
    }

    fn push(&mut self, t: Tensor, requires_grad: bool) -> TensorId {
        self.values.push(t);
        self.requires_grad.push(requires_grad);
        TensorId { tape: self.id, index: self.values.len() - 1 }
    }

    /// Adds a leaf whose gradient `backward` will report.
    pub fn watch(&mut self, t: Tensor) -> TensorId {
        let id = self.push(t, true);
        self.watched.push(id.index);
        id
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.values[self.resolve(id).expect("TensorId from another tape")]
    }

    /// Parameters registered through [`Ops::parameter`], by name.
    pub fn parameters(&self) -> &BTreeMap<String, TensorId> {
        &self.parameters
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn resolve(&self, id: TensorId) -> Result<usize> {
        if id.tape != self.id || id.index >= self.values.len() {
            return Err(Error::Tape(format!("tensor {:?} is not on this tape", id)));
        }
        Ok(id.index)
    }

    fn record(&mut self, op: TapeOp, inputs: &[TensorId], out: Tensor) -> Result<TensorId> {
        let idx: Vec<usize> = inputs.iter().map(|&i| self.resolve(i)).collect::<Result<_>>()?;
        let needs = idx.iter().any(|&i| self.requires_grad[i]);
        let id = self.push(out, needs);
        if needs {
            self.records.push(Record { op, inputs: idx, output: id.index });
        }
        Ok(id)
    }

    /// Gradients of the scalar `loss` with respect to every watched tensor.
    /// Watched tensors that do not influence the loss get zeros.
    pub fn backward(&self, loss: TensorId) -> Result<BTreeMap<TensorId, Tensor>> {
        let loss_idx = self.resolve(loss)?;
        let loss_value = &self.values[loss_idx];
        if loss_value.numel() != 1 {
            return Err(shape_err!("loss must be a scalar, got shape {:?}", loss_value.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.values.len()];
        grads[loss_idx] = Some(Tensor::full(loss_value.shape(), loss_value.dtype(), 1.0));

        for rec in self.records.iter().rev() {
            let Some(g) = grads[rec.output].take() else { continue };
            let input_grads = self.input_grads(rec, &g)?;
            grads[rec.output] = Some(g);
            for (&input, grad) in rec.inputs.iter().zip(input_grads) {
                let Some(grad) = grad else { continue };
                if !self.requires_grad[input] {
                    continue;
                }
                grads[input] = Some(match grads[input].take() {
                    None => grad,
                    Some(acc) => kernels::binary(BinaryOp::Add, &acc, &grad)?,
                });
            }
        }

        let mut out = BTreeMap::new();
        for &w in &self.watched {
            let v = &self.values[w];
            let g = grads[w].take().unwrap_or_else(|| Tensor::zeros(v.shape(), v.dtype()));
            out.insert(TensorId { tape: self.id, index: w }, g);
        }
        Ok(out)
    }

    fn input_grads(&self, rec: &Record, g: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let x = |i: usize| &self.values[rec.inputs[i]];
        let y = &self.values[rec.output];
        let wants = |i: usize| self.requires_grad[rec.inputs[i]];
        Ok(match &rec.op {
            TapeOp::MatMul => {
                let (a, b) = (x(0), x(1));
                let ga = if wants(0) {
                    let full = self.backend.matmul(g, &kernels::transpose_last(b)?)?;
                    Some(kernels::sum_to_shape(&full, a.shape())?)
                } else {
                    None
                };
                let gb = if wants(1) {
                    let full = self.backend.matmul(&kernels::transpose_last(a)?, g)?;
                    Some(kernels::sum_to_shape(&full, b.shape())?)
                } else {
                    None
                };
                vec![ga, gb]
            }
            TapeOp::Conv2d { stride, padding } => {
                let (inp, w) = (x(0), x(1));
                vec![
                    wants(0).then(|| kernels::conv2d_grad_input(g, w, inp.shape(), *stride, *padding)).transpose()?,
                    wants(1).then(|| kernels::conv2d_grad_kernel(inp, g, w.shape(), *stride, *padding)).transpose()?,
                ]
            }
            TapeOp::Unary(op) => vec![Some(kernels::unary_grad(*op, x(0), y, g)?)],
            TapeOp::Binary(op) => {
                let (a, b) = (x(0), x(1));
                let (ga, gb) = match op {
                    BinaryOp::Add => (g.clone(), g.clone()),
                    BinaryOp::Sub => (g.clone(), kernels::unary(UnaryOp::Neg, g)?),
                    BinaryOp::Mul => (kernels::binary(BinaryOp::Mul, g, b)?, kernels::binary(BinaryOp::Mul, g, a)?),
                    BinaryOp::Div => {
                        let ga = kernels::binary(BinaryOp::Div, g, b)?;
                        let gy = kernels::binary(BinaryOp::Mul, g, y)?;
                        let gb = kernels::unary(UnaryOp::Neg, &kernels::binary(BinaryOp::Div, &gy, b)?)?;
                        (ga, gb)
                    }
                };
                vec![
                    wants(0).then(|| kernels::sum_to_shape(&ga, a.shape())).transpose()?,
                    wants(1).then(|| kernels::sum_to_shape(&gb, b.shape())).transpose()?,
                ]
            }
            TapeOp::Reduce { op, axis } => {
                let inp = x(0);
                let mut kept = inp.shape().to_vec();
                kept[*axis] = 1;
                let gk = g.reshaped(&kept)?;
                let grad = match op {
                    ReduceOp::Sum => kernels::broadcast_to(&gk, inp.shape())?,
                    ReduceOp::Mean => {
                        let n = inp.shape()[*axis] as f64;
                        let spread = kernels::broadcast_to(&gk, inp.shape())?;
                        kernels::binary(BinaryOp::Div, &spread, &Tensor::full(&[], g.dtype(), n))?
                    }
                    ReduceOp::Max => kernels::reduce_max_grad(inp, &gk, *axis)?,
                };
                vec![Some(grad)]
            }
            TapeOp::Softmax { axis } => vec![Some(kernels::softmax_grad(y, g, *axis)?)],
            TapeOp::LogSoftmax { axis } => vec![Some(kernels::log_softmax_grad(y, g, *axis)?)],
            TapeOp::LayerNorm { eps } => {
                let (dx, dgamma, dbeta) = kernels::layernorm_grad(x(0), x(1), g, *eps)?;
                vec![Some(dx), Some(dgamma), Some(dbeta)]
            }
            TapeOp::Gather => vec![wants(0).then(|| kernels::gather_grad(x(1), g, x(0).shape())).transpose()?, None],
            TapeOp::Transpose { perm } => vec![Some(kernels::transpose(g, &kernels::inverse_permutation(perm))?)],
            TapeOp::Reshape => vec![Some(g.reshaped(x(0).shape())?)],
            TapeOp::Slice { axis, start } => vec![Some(kernels::slice_grad(g, x(0).shape(), *axis, *start)?)],
            TapeOp::Concat { axis } => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(rec.inputs.len());
                for i in 0..rec.inputs.len() {
                    let len = x(i).shape()[*axis];
                    out.push(if wants(i) { Some(kernels::slice(g, *axis, offset, offset + len)?) } else { None });
                    offset += len;
                }
                out
            }
        })
    }
}

impl Ops for GradTape<'_> {
    type Value = TensorId;

    fn constant(&mut self, t: Tensor) -> Result<TensorId> {
        Ok(self.push(t, false))
    }

    fn parameter(&mut self, name: &str, t: &Tensor) -> Result<TensorId> {
        let id = self.watch(t.clone());
        self.parameters.insert(name.to_string(), id);
        Ok(id)
    }

    fn shape(&self, v: &TensorId) -> Vec<usize> {
        self.value(*v).shape().to_vec()
    }

    fn dtype(&self, v: &TensorId) -> DType {
        self.value(*v).dtype()
    }

    fn matmul(&mut self, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        let out = self.backend.matmul(&self.values[self.resolve(*a)?], &self.values[self.resolve(*b)?])?;
        self.record(TapeOp::MatMul, &[*a, *b], out)
    }

    fn conv2d(&mut self, x: &TensorId, w: &TensorId, stride: usize, padding: usize) -> Result<TensorId> {
        let out = self.backend.conv2d(&self.values[self.resolve(*x)?], &self.values[self.resolve(*w)?], stride, padding)?;
        self.record(TapeOp::Conv2d { stride, padding }, &[*x, *w], out)
    }

    fn unary(&mut self, op: UnaryOp, x: &TensorId) -> Result<TensorId> {
        let out = self.backend.unary(op, &self.values[self.resolve(*x)?])?;
        self.record(TapeOp::Unary(op), &[*x], out)
    }

    fn binary(&mut self, op: BinaryOp, a: &TensorId, b: &TensorId) -> Result<TensorId> {
        let out = self.backend.binary(op, &self.values[self.resolve(*a)?], &self.values[self.resolve(*b)?])?;
        self.record(TapeOp::Binary(op), &[*a, *b], out)
    }

    fn reduce(&mut self, op: ReduceOp, x: &TensorId, axis: usize, keep_dim: bool) -> Result<TensorId> {
        let out = self.backend.reduce(op, &self.values[self.resolve(*x)?], axis, keep_dim)?;
        self.record(TapeOp::Reduce { op, axis }, &[*x], out)
    }

    fn softmax(&mut self, x: &TensorId, axis: usize) -> Result<TensorId> {
        let out = self.backend.softmax(&self.values[self.resolve(*x)?], axis)?;
        self.record(TapeOp::Softmax { axis }, &[*x], out)
    }

    fn log_softmax(&mut self, x: &TensorId, axis: usize) -> Result<TensorId> {
        let out = self.backend.log_softmax(&self.values[self.resolve(*x)?], axis)?;
        self.record(TapeOp::LogSoftmax { axis }, &[*x], out)
    }

    fn layernorm(&mut self, x: &TensorId, gamma: &TensorId, beta: &TensorId, eps: f64) -> Result<TensorId> {
        let out = self.backend.layernorm(
            &self.values[self.resolve(*x)?],
            &self.values[self.resolve(*gamma)?],
            &self.values[self.resolve(*beta)?],
            eps,
        )?;
        self.record(TapeOp::LayerNorm { eps }, &[*x, *gamma, *beta], out)
    }

    fn gather(&mut self, table: &TensorId, ids: &TensorId) -> Result<TensorId> {
        let out = self.backend.gather(&self.values[self.resolve(*table)?], &self.values[self.resolve(*ids)?])?;
        self.record(TapeOp::Gather, &[*table, *ids], out)
    }

    fn transpose(&mut self, x: &TensorId, perm: &[usize]) -> Result<TensorId> {
        let out = self.backend.transpose(&self.values[self.resolve(*x)?], perm)?;
        self.record(TapeOp::Transpose { perm: perm.to_vec() }, &[*x], out)
    }

    fn reshape(&mut self, x: &TensorId, shape: &[usize]) -> Result<TensorId> {
        let out = self.backend.reshape(&self.values[self.resolve(*x)?], shape)?;
        self.record(TapeOp::Reshape, &[*x], out)
    }

    fn slice(&mut self, x: &TensorId, axis: usize, start: usize, end: usize) -> Result<TensorId> {
        let out = self.backend.slice(&self.values[self.resolve(*x)?], axis, start, end)?;
        self.record(TapeOp::Slice { axis, start }, &[*x], out)
    }

    fn concat(&mut self, xs: &[TensorId], axis: usize) -> Result<TensorId> {
        let idx: Vec<usize> = xs.iter().map(|&i| self.resolve(i)).collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = idx.iter().map(|&i| &self.values[i]).collect();
        let out = self.backend.concat(&refs, axis)?;
        self.record(TapeOp::Concat { axis }, xs, out)
    }

    fn to_host(&mut self, v: &TensorId) -> Result<Tensor> {
        Ok(self.values[self.resolve(*v)?].clone())
    }
}

/// Outcome of [`gradcheck`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_err: f64,
    /// Number of input elements compared.
    pub checked: usize,
}

/// Denominator floor of the relative error, so gradients that are zero up
/// to rounding do not divide by nothing.
pub const GRADCHECK_FLOOR: f64 = 1e-3;

/// Compares tape gradients of `loss = sum_i <w_i, out_i>` against central
/// differences with step `h`, for every element of every float input. The
/// weights `w_i` are uniform in [-1, 1) from `Rng::new(seed)` so that
/// outputs with a constant sum (softmax, layernorm) are still checked.
pub fn gradcheck<P: Program + ?Sized>(program: &P, inputs: &[Tensor], h: f64, seed: u64, backend: &dyn Backend) -> Result<GradCheck> {
    let base = run_eager(program, inputs, backend)?;
    let mut rng = Rng::new(seed);
    let weights: Vec<Vec<f64>> = base.iter().map(|o| (0..o.numel()).map(|_| rng.uniform(-1.0, 1.0)).collect()).collect();
    let objective = |xs: &[Tensor]| -> Result<f64> {
        let outs = run_eager(program, xs, backend)?;
        Ok(outs.iter().zip(&weights).map(|(o, w)| o.to_f64_vec().iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum())
    };

    let mut tape = GradTape::new(backend);
    let ids: Vec<TensorId> = inputs
        .iter()
        .map(|t| if t.dtype().is_float() { Ok(tape.watch(t.clone())) } else { tape.constant(t.clone()) })
        .collect::<Result<_>>()?;
    let outs = program.run(&mut tape, &ids)?;
    let mut loss: Option<TensorId> = None;
    for (o, w) in outs.iter().zip(&weights) {
        let shape = tape.shape(o);
        let dtype = tape.dtype(o);
        let w = tape.constant(Tensor::create(&shape, dtype, w)?)?;
        let term = tape.mul(o, &w)?;
        let term = tape.sum_all(&term)?;
        loss = Some(match loss {
            Some(l) => tape.add(&l, &term)?,
            None => term,
        });
    }
    let loss = loss.ok_or_else(|| Error::Value("program has no outputs".into()))?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheck { max_rel_err: 0.0, checked: 0 };
    let mut xs = inputs.to_vec();
    for (i, t) in inputs.iter().enumerate() {
        if !t.dtype().is_float() {
            continue;
        }
        let analytic = grads[&ids[i]].to_f64_vec();
        let values = t.to_f64_vec();
        for j in 0..values.len() {
            let mut bumped = values.clone();
            bumped[j] = values[j] + h;
            xs[i] = Tensor::create(t.shape(), t.dtype(), &bumped)?;
            let up = objective(&xs)?;
            bumped[j] = values[j] - h;
            xs[i] = Tensor::create(t.shape(), t.dtype(), &bumped)?;
            let down = objective(&xs)?;
            let numeric = (up - down) / (2.0 * h);
            let denom = analytic[j].abs().max(numeric.abs()).max(GRADCHECK_FLOOR);
            report.max_rel_err = report.max_rel_err.max((analytic[j] - numeric).abs() / denom);
            report.checked += 1;
        }
        xs[i] = t.clone();
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Reference;

    #[test]
    fn square_sum_gradient() {
        let mut tape = GradTape::new(&Reference);
        let x = tape.watch(Tensor::create(&[3], DType::F64, &[1.0, 2.0, 3.0]).unwrap());
        let sq = tape.mul(&x, &x).unwrap();
        let loss = tape.sum(&sq, 0, false).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[&x].to_f64_vec(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn matmul_sum_gradient_is_row_sums() {
        let mut tape = GradTape::new(&Reference);
        let x = tape.watch(Tensor::create(&[2, 3], DType::F64, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let w = tape.constant(Tensor::create(&[3, 2], DType::F64, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap()).unwrap();
        let y = tape.matmul(&x, &w).unwrap();
        let loss = tape.sum_all(&y).unwrap();
        let g = tape.backward(loss).unwrap()[&x].to_f64_vec();
        // d/dx_ij sum(xW) = sum_k W_jk
        assert_eq!(g, vec![3.0, 7.0, 11.0, 3.0, 7.0, 11.0]);
    }

    #[test]
    fn unreachable_watched_gets_zero() {
        let mut tape = GradTape::new(&Reference);
        let x = tape.watch(Tensor::full(&[2], DType::F64, 1.0));
        let unused = tape.watch(Tensor::full(&[3], DType::F64, 5.0));
        let loss = tape.sum(&x, 0, false).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[&unused].to_f64_vec(), vec![0.0; 3]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = GradTape::new(&Reference);
        let x = tape.watch(Tensor::full(&[2], DType::F64, 1.0));
        assert!(matches!(tape.backward(x), Err(Error::Shape(_))));
    }

    #[test]
    fn foreign_loss_rejected() {
        let mut a = GradTape::new(&Reference);
        let mut b = GradTape::new(&Reference);
        let xa = a.watch(Tensor::scalar(1.0f64));
        let _ = b.watch(Tensor::scalar(1.0f64));
        assert!(matches!(b.backward(xa), Err(Error::Tape(_))));
    }

    #[test]
    fn shared_input_accumulates() {
        let mut tape = GradTape::new(&Reference);
        let x = tape.watch(Tensor::scalar(3.0f64));
        let a = tape.add(&x, &x).unwrap();
        let b = tape.mul(&a, &x).unwrap(); // 2x^2
        let g = tape.backward(b).unwrap()[&x].item().unwrap();
        assert_eq!(g, 12.0);
    }
}
