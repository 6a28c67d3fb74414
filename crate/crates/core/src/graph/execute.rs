
use alloc::vec;
use alloc::vec::Vec;

use super::{GraphIr, Op};
use crate::error::shape_err;
use crate::{Backend, Result, Tensor};

/// Evaluates a single compute node.
pub fn eval_node(op: &Op, inputs: &[&Tensor], out_shape: &[usize], backend: &dyn Backend) -> Result<Tensor> {
    match op {
        Op::Input { .. } | Op::Const(_) => unreachable!("values are not evaluated"),
        Op::MatMul => backend.matmul(inputs[0], inputs[1]),
        Op::Conv2d { stride, padding } => backend.conv2d(inputs[0], inputs[1], *stride, *padding),
        Op::Unary(u) => backend.unary(*u, inputs[0]),
        Op::Binary(b) => backend.binary(*b, inputs[0], inputs[1]),
        Op::Reduce { op, axis, keep_dim } => backend.reduce(*op, inputs[0], *axis, *keep_dim),
        Op::Softmax { axis } => backend.softmax(inputs[0], *axis),
        Op::LogSoftmax { axis } => backend.log_softmax(inputs[0], *axis),
        Op::LayerNorm { eps } => backend.layernorm(inputs[0], inputs[1], inputs[2], *eps),
        Op::Gather => backend.gather(inputs[0], inputs[1]),
        Op::Transpose { perm } => backend.transpose(inputs[0], perm),
        Op::Reshape { shape } => backend.reshape(inputs[0], shape),
        Op::Slice { axis, start, end } => backend.slice(inputs[0], *axis, *start, *end),
        Op::Concat { axis } => backend.concat(inputs, *axis),
        Op::Fused(k) => k.run(inputs, out_shape).map(|t| t.with_backend(backend.name())),
    }
}

/// Runs the graph. Inputs must match the capture-time specs exactly.
pub fn execute(g: &GraphIr, inputs: &[Tensor], backend: &dyn Backend) -> Result<Vec<Tensor>> {
    if inputs.len() != g.input_specs.len() {
        return Err(shape_err!("graph takes {} inputs, got {}", g.input_specs.len(), inputs.len()));
    }
    for (i, (t, spec)) in inputs.iter().zip(&g.input_specs).enumerate() {
        let expected = spec.static_shape().ok_or_else(|| shape_err!("input {} has a dynamic spec", i))?;
        if t.shape() != expected.as_slice() || t.dtype() != spec.dtype {
            return Err(shape_err!(
                "input {} is {}{:?} but the graph was captured for {}{:?}",
                i,
                t.dtype(),
                t.shape(),
                spec.dtype,
                expected
            ));
        }
    }

    // Free each intermediate after its last use.
    let mut last_use = vec![0usize; g.nodes.len()];
    for (i, n) in g.nodes.iter().enumerate() {
        for x in &n.inputs {
            last_use[x.0] = i;
        }
    }
    for o in &g.outputs {
        last_use[o.0] = usize::MAX;
    }

    let mut values: Vec<Option<Tensor>> = vec![None; g.nodes.len()];
    for (i, node) in g.nodes.iter().enumerate() {
        let value = match &node.op {
            Op::Input { index } => inputs[*index].clone(),
            Op::Const(t) => t.clone(),
            op => {
                let args: Vec<&Tensor> = node
                    .inputs
                    .iter()
                    .map(|x| values[x.0].as_ref().ok_or_else(|| shape_err!("node {} read before it was computed", x.0)))
                    .collect::<Result<_>>()?;
                let shape = g.shape(super::NodeId(i)).map(|s| s.to_vec()).unwrap_or_default();
                eval_node(op, &args, &shape, backend)?
            }
        };
        values[i] = Some(value);
        for x in &node.inputs {
            if last_use[x.0] == i {
                values[x.0] = None;
            }
        }
    }
    g.outputs
        .iter()
        .map(|o| values[o.0].clone().ok_or_else(|| shape_err!("output node {} has no value", o.0)))
        .collect()
}

