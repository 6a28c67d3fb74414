use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{GraphIr, Op};
use crate::tensor::shape;
use crate::{DType, Error, Result};

fn float_dtype(kind: &str, dtypes: &[DType]) -> Result<DType> {
    let d = dtypes[0];
    if !d.is_float() || dtypes.iter().any(|&x| x != d) {
        return Err(Error::Dtype(format!("{kind} needs matching float inputs, got {:?}", dtypes)));
    }
    Ok(d)
}

/// Output shape and dtype of `op` applied to inputs of the given shapes.
pub(crate) fn node_signature(op: &Op, shapes: &[&[usize]], dtypes: &[DType]) -> Result<(Vec<usize>, DType)> {
    let arity = |n: usize| {
        if shapes.len() != n {
            Err(Error::Shape(format!("{} expects {} inputs, got {}", op.kind(), n, shapes.len())))
        } else {
            Ok(())
        }
    };
    Ok(match op {
        Op::Input { .. } | Op::Const(_) => unreachable!("values carry their own shapes"),
        Op::MatMul => {
            arity(2)?;
            (shape::matmul(shapes[0], shapes[1])?, float_dtype("matmul", dtypes)?)
        }
        Op::Conv2d { stride, padding } => {
            arity(2)?;
            (shape::conv2d(shapes[0], shapes[1], *stride, *padding)?, float_dtype("conv2d", dtypes)?)
        }
        Op::Unary(u) => {
            arity(1)?;
            (shapes[0].to_vec(), float_dtype(u.name(), dtypes)?)
        }
        Op::Binary(b) => {
            arity(2)?;
            (shape::broadcast(shapes[0], shapes[1])?, float_dtype(b.name(), dtypes)?)
        }
        Op::Reduce { op, axis, keep_dim } => {
            arity(1)?;
            (shape::reduce(shapes[0], *axis, *keep_dim)?, float_dtype(op.name(), dtypes)?)
        }
        Op::Softmax { axis } | Op::LogSoftmax { axis } => {
            arity(1)?;
            shape::check_axis(*axis, shapes[0].len())?;
            (shapes[0].to_vec(), float_dtype("softmax", dtypes)?)
        }
        Op::LayerNorm { .. } => {
            arity(3)?;
            (shape::layernorm(shapes[0], shapes[1], shapes[2])?, float_dtype("layernorm", dtypes)?)
        }
        Op::Gather => {
            arity(2)?;
            if dtypes[1] != DType::I32 {
                return Err(Error::Dtype(format!("gather ids must be int32, got {}", dtypes[1])));
            }
            (shape::gather(shapes[0], shapes[1])?, dtypes[0])
        }
        Op::Transpose { perm } => {
            arity(1)?;
            (shape::transpose(shapes[0], perm)?, dtypes[0])
        }
        Op::Reshape { shape: to } => {
            arity(1)?;
            (shape::reshape(shapes[0], to)?, dtypes[0])
        }
        Op::Slice { axis, start, end } => {
            arity(1)?;
            (shape::slice(shapes[0], *axis, *start, *end)?, dtypes[0])
        }
        Op::Concat { axis } => {
            if shapes.is_empty() {
                return Err(Error::Shape("concat of zero inputs".into()));
            }
            if dtypes.iter().any(|&d| d != dtypes[0]) {
                return Err(Error::Dtype(format!("concat inputs must share a dtype, got {:?}", dtypes)));
            }
            (shape::concat(shapes, *axis)?, dtypes[0])
        }
        Op::Fused(k) => {
            let out = shapes.iter().try_fold(Vec::new(), |acc: Vec<usize>, s| shape::broadcast(&acc, s))?;
            if k.steps.is_empty() {
                return Err(Error::Shape("empty fusion group".into()));
            }
            (out, float_dtype("fused", dtypes)?)
        }
    })
}

/// Recomputes the shape table from the declared input specs.
pub fn infer_shapes(mut g: GraphIr) -> Result<GraphIr> {
    let mut table: Vec<Option<(Vec<usize>, DType)>> = Vec::with_capacity(g.nodes.len());
    for (i, node) in g.nodes.iter().enumerate() {
        let fail = |reason: String| Error::NodeShape { node: i, reason };
        if let Some(bad) = node.inputs.iter().find(|x| x.0 >= i) {
            return Err(fail(format!("input {} does not precede node", bad.0)));
        }
        let sig = match &node.op {
            Op::Input { index } => {
                let spec = g.input_specs.get(*index).ok_or_else(|| fail(format!("no spec for input {index}")))?;
                let s = spec.static_shape().ok_or_else(|| fail("input has a dynamic extent".into()))?;
                (s, spec.dtype)
            }
            Op::Const(t) => (t.shape().to_vec(), t.dtype()),
            op => {
                let shapes: Vec<&[usize]> = node.inputs.iter().map(|x| table[x.0].as_ref().unwrap().0.as_slice()).collect();
                let dtypes: Vec<DType> = node.inputs.iter().map(|x| table[x.0].as_ref().unwrap().1).collect();
                node_signature(op, &shapes, &dtypes).map_err(|e| fail(e.to_string()))?
            }
        };
        table.push(Some(sig));
    }
    for o in &g.outputs {
        if o.0 >= g.nodes.len() {
            return Err(Error::NodeShape { node: o.0, reason: "output refers to a missing node".into() });
        }
    }
    g.shapes = table;
    Ok(g)
}
