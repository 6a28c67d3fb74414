//! Reference kernels.
//!
//! Straightforward loops that accumulate in `f64` regardless of the element
//! type. These define the numerics every other backend is checked against,
//! and they are also the gradient kernels used by the tape.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{BinaryOp, ReduceOp, UnaryOp};
use crate::error::shape_err;
use crate::tensor::{shape, Storage};
use crate::{dispatch, DType, Element, Error, Real, Result, Tensor};

macro_rules! float_op {
    ($t:expr, $what:expr, |$v:ident : $F:ident| $body:expr) => {
        match $t.storage() {
            Storage::F32($v) => {
                #[allow(dead_code)]
                type $F = f32;
                $body
            }
            Storage::F64($v) => {
                #[allow(dead_code)]
                type $F = f64;
                $body
            }
            other => Err(Error::Dtype(format!(
                "{} requires a float tensor, got {}",
                $what,
                other.dtype()
            ))),
        }
    };
}

macro_rules! float_pair {
    ($a:expr, $b:expr, $what:expr, |$x:ident, $y:ident : $F:ident| $body:expr) => {
        match ($a.storage(), $b.storage()) {
            (Storage::F32($x), Storage::F32($y)) => {
                #[allow(dead_code)]
                type $F = f32;
                $body
            }
            (Storage::F64($x), Storage::F64($y)) => {
                #[allow(dead_code)]
                type $F = f64;
                $body
            }
            (l, r) => Err(Error::Dtype(format!(
                "{} requires matching float tensors, got {} and {}",
                $what,
                l.dtype(),
                r.dtype()
            ))),
        }
    };
}

pub(crate) use float_op;
#[allow(unused_imports)]
pub(crate) use float_pair;

/// Splits `[outer, axis, inner]` around `axis`.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

// ---------------------------------------------------------------- elementwise

impl UnaryOp {
    #[inline]
    pub fn apply<F: Real>(self, x: F) -> F {
        match self {
            UnaryOp::Relu => {
                if x > F::ZERO {
                    x
                } else {
                    F::ZERO
                }
            }
            UnaryOp::Gelu => {
                let half = F::from_f64(0.5);
                half * x * (F::ONE + (x * F::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf())
            }
            UnaryOp::Exp => x.exp(),
            UnaryOp::Log => x.ln(),
            UnaryOp::Neg => -x,
        }
    }

    /// d(op(x))/dx given the input `x` and output `y`.
    pub fn derivative<F: Real>(self, x: F, y: F) -> F {
        match self {
            UnaryOp::Relu => {
                if x > F::ZERO {
                    F::ONE
                } else {
                    F::ZERO
                }
            }
            UnaryOp::Gelu => {
                let cdf = F::from_f64(0.5) * (F::ONE + (x * F::from_f64(core::f64::consts::FRAC_1_SQRT_2)).erf());
                let pdf = (-(x * x) * F::from_f64(0.5)).exp() * F::from_f64(0.398_942_280_401_432_7);
                cdf + x * pdf
            }
            UnaryOp::Exp => y,
            UnaryOp::Log => F::ONE / x,
            UnaryOp::Neg => -F::ONE,
        }
    }
}

impl BinaryOp {
    #[inline]
    pub fn apply<F: Real>(self, a: F, b: F) -> F {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
        }
    }
}

pub fn unary(op: UnaryOp, x: &Tensor) -> Result<Tensor> {
    float_op!(x, op.name(), |v: F| Tensor::from_vec(x.shape(), v.iter().map(|&e| op.apply(e)).collect::<Vec<F>>()))
}

pub(crate) fn binary_slices<F: Real>(op: BinaryOp, a: &[F], ashape: &[usize], b: &[F], bshape: &[usize], out: &[usize]) -> Vec<F> {
    if ashape == out && bshape == out {
        a.iter().zip(b).map(|(&x, &y)| op.apply(x, y)).collect()
    } else if b.len() == 1 && ashape == out {
        let y = b[0];
        a.iter().map(|&x| op.apply(x, y)).collect()
    } else if a.len() == 1 && bshape == out {
        let x = a[0];
        b.iter().map(|&y| op.apply(x, y)).collect()
    } else if ashape == out && out.ends_with(bshape) && !b.is_empty() {
        a.iter().enumerate().map(|(i, &x)| op.apply(x, b[i % b.len()])).collect()
    } else {
        let ia = shape::broadcast_index_map(ashape, out);
        let ib = shape::broadcast_index_map(bshape, out);
        ia.iter().zip(&ib).map(|(&i, &j)| op.apply(a[i], b[j])).collect()
    }
}

pub fn binary(op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let out = shape::broadcast(a.shape(), b.shape())?;
    float_pair!(a, b, op.name(), |x, y: F| {
        Tensor::from_vec(&out, binary_slices::<F>(op, x, a.shape(), y, b.shape(), &out))
    })
}

// ----------------------------------------------------------------- reductions

pub fn reduce(op: ReduceOp, x: &Tensor, axis: usize, keep_dim: bool) -> Result<Tensor> {
    let out_shape = shape::reduce(x.shape(), axis, keep_dim)?;
    let (outer, n, inner) = split_axis(x.shape(), axis);
    float_op!(x, op.name(), |v: F| {
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let value = match op {
                    ReduceOp::Sum | ReduceOp::Mean => {
                        let mut acc = 0.0f64;
                        for j in 0..n {
                            acc += v[base + j * inner].to_f64();
                        }
                        if op == ReduceOp::Mean {
                            acc /= n as f64;
                        }
                        F::from_f64(acc)
                    }
                    ReduceOp::Max => {
                        let mut best = F::from_f64(f64::NEG_INFINITY);
                        for j in 0..n {
                            best = best.max(v[base + j * inner]);
                        }
                        best
                    }
                };
                out.push(value);
            }
        }
        Tensor::from_vec(&out_shape, out)
    })
}

/// Gradient of a max-reduction: the upstream value goes to the first
/// maximal element of each slice.
pub fn reduce_max_grad(x: &Tensor, g: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = split_axis(x.shape(), axis);
    float_pair!(x, g, "max gradient", |v, gv: F| {
        let mut out = vec![F::ZERO; v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut best = 0;
                for j in 1..n {
                    if v[base + j * inner] > v[base + best * inner] {
                        best = j;
                    }
                }
                if n > 0 {
                    out[base + best * inner] = gv[o * inner + i];
                }
            }
        }
        Tensor::from_vec(x.shape(), out)
    })
}

/// Sums a broadcast gradient back down to `target` shape.
pub fn sum_to_shape(g: &Tensor, target: &[usize]) -> Result<Tensor> {
    if g.shape() == target {
        return Ok(g.clone());
    }
    let map = shape::broadcast_index_map(target, g.shape());
    float_op!(g, "sum_to_shape", |v: F| {
        let mut acc = vec![0.0f64; shape::numel(target)];
        for (i, &j) in map.iter().enumerate() {
            acc[j] += v[i].to_f64();
        }
        Tensor::from_vec(target, acc.into_iter().map(F::from_f64).collect::<Vec<F>>())
    })
}

/// Materialises `x` broadcast up to `target`.
pub fn broadcast_to(x: &Tensor, target: &[usize]) -> Result<Tensor> {
    if x.shape() == target {
        return Ok(x.clone());
    }
    let out = shape::broadcast(x.shape(), target)?;
    if out != target {
        return Err(shape_err!("cannot broadcast {:?} to {:?}", x.shape(), target));
    }
    let map = shape::broadcast_index_map(x.shape(), target);
    Ok(dispatch!(x, |v| Tensor::from_storage(out, Element::store(map.iter().map(|&i| v[i]).collect()))))
}

/// `g * op'(x)` elementwise.
pub fn unary_grad(op: UnaryOp, x: &Tensor, y: &Tensor, g: &Tensor) -> Result<Tensor> {
    float_pair!(x, g, "unary gradient", |xv, gv: F| {
        let yv = y.data::<F>()?;
        let out: Vec<F> = xv.iter().zip(yv.iter()).zip(gv.iter()).map(|((&a, &b), &c)| c * op.derivative(a, b)).collect();
        Tensor::from_vec(x.shape(), out)
    })
}

// -------------------------------------------------------------- normalisation

pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    softmax_impl(x, axis, false)
}

pub fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    softmax_impl(x, axis, true)
}

fn softmax_impl(x: &Tensor, axis: usize, log: bool) -> Result<Tensor> {
    shape::check_axis(axis, x.rank())?;
    let (outer, n, inner) = split_axis(x.shape(), axis);
    float_op!(x, "softmax", |v: F| {
        let mut out = vec![F::ZERO; v.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    max = max.max(v[base + j * inner].to_f64());
                }
                let mut sum = 0.0f64;
                for j in 0..n {
                    sum += libm::exp(v[base + j * inner].to_f64() - max);
                }
                let log_sum = libm::log(sum);
                for j in 0..n {
                    let shifted = v[base + j * inner].to_f64() - max;
                    out[base + j * inner] = F::from_f64(if log {
                        shifted - log_sum
                    } else {
                        libm::exp(shifted) / sum
                    });
                }
            }
        }
        Tensor::from_vec(x.shape(), out)
    })
}

/// `dx = y * (g - sum(g * y))` along `axis`.
pub fn softmax_grad(y: &Tensor, g: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = split_axis(y.shape(), axis);
    float_pair!(y, g, "softmax gradient", |yv, gv: F| {
        let mut out = vec![F::ZERO; yv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut dot = 0.0f64;
                for j in 0..n {
                    let k = base + j * inner;
                    dot += gv[k].to_f64() * yv[k].to_f64();
                }
                for j in 0..n {
                    let k = base + j * inner;
                    out[k] = F::from_f64(yv[k].to_f64() * (gv[k].to_f64() - dot));
                }
            }
        }
        Tensor::from_vec(y.shape(), out)
    })
}

/// `dx = g - softmax(x) * sum(g)` along `axis`, with `y = log_softmax(x)`.
pub fn log_softmax_grad(y: &Tensor, g: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, n, inner) = split_axis(y.shape(), axis);
    float_pair!(y, g, "log_softmax gradient", |yv, gv: F| {
        let mut out = vec![F::ZERO; yv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * n * inner + i;
                let mut total = 0.0f64;
                for j in 0..n {
                    total += gv[base + j * inner].to_f64();
                }
                for j in 0..n {
                    let k = base + j * inner;
                    out[k] = F::from_f64(gv[k].to_f64() - libm::exp(yv[k].to_f64()) * total);
                }
            }
        }
        Tensor::from_vec(y.shape(), out)
    })
}

pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    shape::layernorm(x.shape(), gamma.shape(), beta.shape())?;
    let d = *x.shape().last().unwrap();
    float_pair!(x, gamma, "layernorm", |v, gv: F| {
        let bv = beta.data::<F>()?;
        let mut out = Vec::with_capacity(v.len());
        for row in v.chunks(d.max(1)) {
            let mean = row.iter().map(|e| e.to_f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|e| { let d = e.to_f64() - mean; d * d }).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            for (j, e) in row.iter().enumerate() {
                let norm = (e.to_f64() - mean) * inv;
                out.push(F::from_f64(norm * gv[j].to_f64() + bv[j].to_f64()));
            }
        }
        Tensor::from_vec(x.shape(), out)
    })
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn layernorm_grad(x: &Tensor, gamma: &Tensor, g: &Tensor, eps: f64) -> Result<(Tensor, Tensor, Tensor)> {
    let d = *x.shape().last().ok_or_else(|| shape_err!("layernorm gradient needs rank >= 1"))?;
    float_pair!(x, g, "layernorm gradient", |v, gv: F| {
        let gam = gamma.data::<F>()?;
        let mut dx = Vec::with_capacity(v.len());
        let mut dgamma = vec![0.0f64; d];
        let mut dbeta = vec![0.0f64; d];
        let mut xhat = vec![0.0f64; d];
        let mut dxhat = vec![0.0f64; d];
        for (row, grow) in v.chunks(d.max(1)).zip(gv.chunks(d.max(1))) {
            let mean = row.iter().map(|e| e.to_f64()).sum::<f64>() / d as f64;
            let var = row.iter().map(|e| { let d = e.to_f64() - mean; d * d }).sum::<f64>() / d as f64;
            let inv = 1.0 / libm::sqrt(var + eps);
            let mut mean_dxhat = 0.0;
            let mut mean_dxhat_xhat = 0.0;
            for j in 0..d {
                xhat[j] = (row[j].to_f64() - mean) * inv;
                let gj = grow[j].to_f64();
                dgamma[j] += gj * xhat[j];
                dbeta[j] += gj;
                dxhat[j] = gj * gam[j].to_f64();
                mean_dxhat += dxhat[j];
                mean_dxhat_xhat += dxhat[j] * xhat[j];
            }
            mean_dxhat /= d as f64;
            mean_dxhat_xhat /= d as f64;
            for j in 0..d {
                dx.push(F::from_f64(inv * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat)));
            }
        }
        let to = |acc: Vec<f64>| Tensor::from_vec(&[d], acc.into_iter().map(F::from_f64).collect::<Vec<F>>());
        Ok((Tensor::from_vec(x.shape(), dx)?, to(dgamma)?, to(dbeta)?))
    })
}

// -------------------------------------------------------------------- matmul

/// Output shape, contraction sizes and per-batch `(a, b)` matrix offsets for
/// a broadcast batched matmul.
pub struct MatmulPlan {
    pub out_shape: Vec<usize>,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub offsets: Vec<(usize, usize)>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        let out_shape = shape::matmul(a, b)?;
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let n = b[b.len() - 1];
        let batch = &out_shape[..out_shape.len() - 2];
        let amap = shape::broadcast_index_map(&a[..a.len() - 2], batch);
        let bmap = shape::broadcast_index_map(&b[..b.len() - 2], batch);
        let offsets = amap.into_iter().zip(bmap).map(|(i, j)| (i * m * k, j * k * n)).collect();
        Ok(MatmulPlan { out_shape, m, k, n, offsets })
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let plan = MatmulPlan::new(a.shape(), b.shape())?;
    float_pair!(a, b, "matmul", |x, y: F| {
        let (m, k, n) = (plan.m, plan.k, plan.n);
        let mut out = Vec::with_capacity(shape::numel(&plan.out_shape));
        for &(ao, bo) in &plan.offsets {
            for i in 0..m {
                for j in 0..n {
                    let mut acc = 0.0f64;
                    for p in 0..k {
                        acc += x[ao + i * k + p].to_f64() * y[bo + p * n + j].to_f64();
                    }
                    out.push(F::from_f64(acc));
                }
            }
        }
        Tensor::from_vec(&plan.out_shape, out)
    })
}

/// Swaps the last two axes.
pub fn transpose_last(x: &Tensor) -> Result<Tensor> {
    let r = x.rank();
    if r < 2 {
        return Err(shape_err!("transpose_last needs rank >= 2, got {:?}", x.shape()));
    }
    let mut perm: Vec<usize> = (0..r).collect();
    perm.swap(r - 2, r - 1);
    transpose(x, &perm)
}

// --------------------------------------------------------------- convolution

struct ConvGeom {
    b: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<(Self, Vec<usize>)> {
        let out = shape::conv2d(x, w, stride, pad)?;
        Ok((
            ConvGeom {
                b: x[0],
                h: x[1],
                w: x[2],
                cin: x[3],
                kh: w[0],
                kw: w[1],
                cout: w[3],
                ho: out[1],
                wo: out[2],
                stride,
                pad,
            },
            out,
        ))
    }

    /// Input pixel feeding output `(oy, ox)` through kernel tap `(ky, kx)`.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let iy = (oy * self.stride + ky).checked_sub(self.pad)?;
        let ix = (ox * self.stride + kx).checked_sub(self.pad)?;
        (iy < self.h && ix < self.w).then_some((iy, ix))
    }
}

pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let (geo, out_shape) = ConvGeom::new(x.shape(), w.shape(), stride, padding)?;
    float_pair!(x, w, "conv2d", |xv, wv: F| {
        let mut out = Vec::with_capacity(shape::numel(&out_shape));
        let mut acc = vec![0.0f64; geo.cout];
        for b in 0..geo.b {
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    acc.iter_mut().for_each(|a| *a = 0.0);
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let Some((iy, ix)) = geo.source(oy, ox, ky, kx) else { continue };
                            let xo = ((b * geo.h + iy) * geo.w + ix) * geo.cin;
                            for ci in 0..geo.cin {
                                let xval = xv[xo + ci].to_f64();
                                let wo = ((ky * geo.kw + kx) * geo.cin + ci) * geo.cout;
                                for (co, a) in acc.iter_mut().enumerate() {
                                    *a += xval * wv[wo + co].to_f64();
                                }
                            }
                        }
                    }
                    out.extend(acc.iter().map(|&a| F::from_f64(a)));
                }
            }
        }
        Tensor::from_vec(&out_shape, out)
    })
}

/// Gradient of `conv2d` with respect to its input.
pub fn conv2d_grad_input(g: &Tensor, w: &Tensor, x_shape: &[usize], stride: usize, padding: usize) -> Result<Tensor> {
    let (geo, _) = ConvGeom::new(x_shape, w.shape(), stride, padding)?;
    float_pair!(g, w, "conv2d input gradient", |gv, wv: F| {
        let mut dx = vec![0.0f64; shape::numel(x_shape)];
        for b in 0..geo.b {
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let go = ((b * geo.ho + oy) * geo.wo + ox) * geo.cout;
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let Some((iy, ix)) = geo.source(oy, ox, ky, kx) else { continue };
                            let xo = ((b * geo.h + iy) * geo.w + ix) * geo.cin;
                            for ci in 0..geo.cin {
                                let wo = ((ky * geo.kw + kx) * geo.cin + ci) * geo.cout;
                                let mut acc = 0.0f64;
                                for co in 0..geo.cout {
                                    acc += gv[go + co].to_f64() * wv[wo + co].to_f64();
                                }
                                dx[xo + ci] += acc;
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(x_shape, dx.into_iter().map(F::from_f64).collect::<Vec<F>>())
    })
}

/// Gradient of `conv2d` with respect to its kernel.
pub fn conv2d_grad_kernel(x: &Tensor, g: &Tensor, w_shape: &[usize], stride: usize, padding: usize) -> Result<Tensor> {
    let (geo, _) = ConvGeom::new(x.shape(), w_shape, stride, padding)?;
    float_pair!(x, g, "conv2d kernel gradient", |xv, gv: F| {
        let mut dw = vec![0.0f64; shape::numel(w_shape)];
        for b in 0..geo.b {
            for oy in 0..geo.ho {
                for ox in 0..geo.wo {
                    let go = ((b * geo.ho + oy) * geo.wo + ox) * geo.cout;
                    for ky in 0..geo.kh {
                        for kx in 0..geo.kw {
                            let Some((iy, ix)) = geo.source(oy, ox, ky, kx) else { continue };
                            let xo = ((b * geo.h + iy) * geo.w + ix) * geo.cin;
                            for ci in 0..geo.cin {
                                let xval = xv[xo + ci].to_f64();
                                let wo = ((ky * geo.kw + kx) * geo.cin + ci) * geo.cout;
                                for co in 0..geo.cout {
                                    dw[wo + co] += xval * gv[go + co].to_f64();
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(w_shape, dw.into_iter().map(F::from_f64).collect::<Vec<F>>())
    })
}

// ------------------------------------------------------------------- layout

fn ids_of(ids: &Tensor) -> Result<&[i32]> {
    ids.data::<i32>().map_err(|_| Error::Dtype(format!("gather ids must be int32, got {}", ids.dtype())))
}

pub fn gather(table: &Tensor, ids: &Tensor) -> Result<Tensor> {
    let out_shape = shape::gather(table.shape(), ids.shape())?;
    let rows = table.shape()[0];
    let width: usize = table.shape()[1..].iter().product();
    let idx = ids_of(ids)?;
    for &i in idx {
        if i < 0 || i as usize >= rows {
            return Err(Error::Value(format!("gather id {i} out of range for {rows} rows")));
        }
    }
    dispatch!(table, |v| {
        let mut out = Vec::with_capacity(idx.len() * width);
        for &i in idx {
            let start = i as usize * width;
            out.extend_from_slice(&v[start..start + width]);
        }
        Ok(Tensor::from_storage(out_shape, Element::store(out)))
    })
}

/// Scatter-add of `g` rows back into a zero table of `table_shape`.
pub fn gather_grad(ids: &Tensor, g: &Tensor, table_shape: &[usize]) -> Result<Tensor> {
    let width: usize = table_shape[1..].iter().product();
    let idx = ids_of(ids)?;
    float_op!(g, "gather gradient", |gv: F| {
        let mut acc = vec![0.0f64; shape::numel(table_shape)];
        for (n, &i) in idx.iter().enumerate() {
            let dst = i as usize * width;
            for j in 0..width {
                acc[dst + j] += gv[n * width + j].to_f64();
            }
        }
        Tensor::from_vec(table_shape, acc.into_iter().map(F::from_f64).collect::<Vec<F>>())
    })
}

fn permute<T: Copy>(v: &[T], shape_in: &[usize], perm: &[usize]) -> Vec<T> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape_in[p]).collect();
    let in_strides = shape::strides(shape_in);
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = v.len();
    let mut out = Vec::with_capacity(n);
    if n == 0 {
        return out;
    }
    let mut idx = vec![0usize; out_shape.len()];
    let mut offset = 0usize;
    for _ in 0..n {
        out.push(v[offset]);
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

pub fn transpose(x: &Tensor, perm: &[usize]) -> Result<Tensor> {
    let out_shape = shape::transpose(x.shape(), perm)?;
    Ok(dispatch!(x, |v| Tensor::from_storage(out_shape, Element::store(permute(v, x.shape(), perm)))))
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

pub fn reshape(x: &Tensor, to: &[usize]) -> Result<Tensor> {
    x.reshaped(to)
}

pub fn slice(x: &Tensor, axis: usize, start: usize, end: usize) -> Result<Tensor> {
    let out_shape = shape::slice(x.shape(), axis, start, end)?;
    let (outer, n, inner) = split_axis(x.shape(), axis);
    Ok(dispatch!(x, |v| {
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            out.extend_from_slice(&v[(o * n + start) * inner..(o * n + end) * inner]);
        }
        Tensor::from_storage(out_shape, Element::store(out))
    }))
}

/// Zero tensor of `x_shape` with `g` written at `start..` along `axis`.
pub fn slice_grad(g: &Tensor, x_shape: &[usize], axis: usize, start: usize) -> Result<Tensor> {
    let (outer, n, inner) = split_axis(x_shape, axis);
    let len = g.shape()[axis];
    float_op!(g, "slice gradient", |gv: F| {
        let mut out = vec![F::ZERO; shape::numel(x_shape)];
        for o in 0..outer {
            let src = &gv[o * len * inner..(o + 1) * len * inner];
            out[(o * n + start) * inner..(o * n + start + len) * inner].copy_from_slice(src);
        }
        Tensor::from_vec(x_shape, out)
    })
}

pub fn concat(xs: &[&Tensor], axis: usize) -> Result<Tensor> {
    let shapes: Vec<&[usize]> = xs.iter().map(|t| t.shape()).collect();
    let out_shape = shape::concat(&shapes, axis)?;
    let dtype = xs[0].dtype();
    if xs.iter().any(|t| t.dtype() != dtype) {
        return Err(Error::Dtype("concat inputs must share a dtype".into()));
    }
    let (outer, _, inner) = split_axis(&out_shape, axis);
    macro_rules! cat {
        ($T:ty) => {{
            let parts: Vec<&[$T]> = xs.iter().map(|t| t.data::<$T>()).collect::<Result<_>>()?;
            let mut out: Vec<$T> = Vec::with_capacity(shape::numel(&out_shape));
            for o in 0..outer {
                for (p, t) in parts.iter().zip(xs) {
                    let chunk = t.shape()[axis] * inner;
                    out.extend_from_slice(&p[o * chunk..(o + 1) * chunk]);
                }
            }
            Tensor::from_vec(&out_shape, out)
        }};
    }
    match dtype {
        DType::F32 => cat!(f32),
        DType::F64 => cat!(f64),
        DType::I32 => cat!(i32),
        DType::U8 => cat!(u8),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::create(shape, DType::F64, v).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let i = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(matmul(&i, &m).unwrap(), m);
    }

    #[test]
    fn row_times_column() {
        let out = matmul(&t(&[1, 2], &[1.0, 2.0]), &t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.item().unwrap(), 11.0);
    }

    #[test]
    fn matmul_contraction_mismatch() {
        let err = matmul(&t(&[2, 3], &[0.0; 6]), &t(&[2, 2], &[0.0; 4])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let u = softmax(&t(&[3], &[0.0, 0.0, 0.0]), 0).unwrap().to_f64_vec();
        for p in u {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
        let s = softmax(&Tensor::create(&[2], DType::F32, &[1000.0, 0.0]).unwrap(), 0).unwrap().to_f64_vec();
        assert!((s[0] - 1.0).abs() < 1e-6 && s[1].abs() < 1e-6);
        assert!(matches!(softmax(&t(&[3], &[0.0; 3]), 1), Err(Error::Axis { axis: 1, rank: 1 })));
    }

    #[test]
    fn layernorm_edge_cases() {
        let x = t(&[1, 4], &[3.0; 4]);
        let ones = t(&[4], &[1.0; 4]);
        let zeros = t(&[4], &[0.0; 4]);
        assert!(layernorm(&x, &ones, &zeros, 1e-5).unwrap().to_f64_vec().iter().all(|&v| v == 0.0));
        let b = t(&[4], &[0.5, -1.0, 2.0, 7.0]);
        let y = layernorm(&t(&[1, 4], &[1.0, 5.0, -2.0, 0.3]), &zeros, &b, 1e-5).unwrap();
        assert_eq!(y.to_f64_vec(), b.to_f64_vec());
        assert!(matches!(layernorm(&x, &t(&[3], &[1.0; 3]), &zeros, 1e-5), Err(Error::Shape(_))));
    }

    #[test]
    fn transpose_and_inverse() {
        let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = transpose(&x, &[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.to_f64_vec(), vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
        assert_eq!(transpose(&y, &inverse_permutation(&[1, 0])).unwrap(), x);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let x = t(&[2, 4], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        let a = slice(&x, 1, 0, 1).unwrap();
        let b = slice(&x, 1, 1, 4).unwrap();
        assert_eq!(concat(&[&a, &b], 1).unwrap(), x);
    }

    #[test]
    fn gather_rows_and_bounds() {
        let table = t(&[3, 2], &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        let ids = Tensor::from_vec(&[2], vec![2i32, 0]).unwrap();
        assert_eq!(gather(&table, &ids).unwrap().to_f64_vec(), vec![4.0, 5.0, 0.0, 1.0]);
        let bad = Tensor::from_vec(&[1], vec![3i32]).unwrap();
        assert!(matches!(gather(&table, &bad), Err(Error::Value(_))));
    }

    #[test]
    fn degenerate_shapes_are_empty() {
        let e = t(&[0, 3], &[]);
        assert_eq!(unary(UnaryOp::Relu, &e).unwrap().numel(), 0);
        assert_eq!(matmul(&e, &t(&[3, 2], &[0.0; 6])).unwrap().shape(), &[0, 2]);
    }
}
