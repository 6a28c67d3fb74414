//! Static-shape graph capture, optimisation and execution.
//!
//! A [`Program`](crate::ops::Program) is traced with placeholder inputs into a
//! [`GraphIr`]; [`optimize`] folds constants, removes dead nodes and fuses
//! single-consumer elementwise chains; [`execute`] interprets the result on
//! any backend. Inputs must match the capture-time shapes exactly.

mod capture;
mod execute;
mod fused;
mod optimize;
mod shapes;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::{BinaryOp, DType, ReduceOp, Tensor, UnaryOp};

pub use capture::{capture, Tracer};
pub use execute::{eval_node, execute};
pub use fused::{ElementwiseOp, FusedKernel, FusedStep, Operand};
pub use optimize::{eliminate_dead_code, fold_constants, fuse_elementwise, optimize};
pub use shapes::infer_shapes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

/// Declared shape and dtype of a graph input. `None` marks a dynamic extent,
/// which capture rejects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub shape: Vec<Option<usize>>,
    pub dtype: DType,
}

impl TensorSpec {
    pub fn new(shape: &[usize], dtype: DType) -> Self {
        TensorSpec { shape: shape.iter().map(|&d| Some(d)).collect(), dtype }
    }

    pub fn of(t: &Tensor) -> Self {
        Self::new(t.shape(), t.dtype())
    }

    pub fn static_shape(&self) -> Option<Vec<usize>> {
        self.shape.iter().copied().collect()
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Input { index: usize },
    Const(Tensor),
    MatMul,
    Conv2d { stride: usize, padding: usize },
    Unary(UnaryOp),
    Binary(BinaryOp),
    Reduce { op: ReduceOp, axis: usize, keep_dim: bool },
    Softmax { axis: usize },
    LogSoftmax { axis: usize },
    LayerNorm { eps: f64 },
    Gather,
    Transpose { perm: Vec<usize> },
    Reshape { shape: Vec<usize> },
    Slice { axis: usize, start: usize, end: usize },
    Concat { axis: usize },
    Fused(FusedKernel),
}

impl Op {
    pub fn kind(&self) -> String {
        match self {
            Op::Input { .. } => "input".into(),
            Op::Const(_) => "const".into(),
            Op::MatMul => "matmul".into(),
            Op::Conv2d { .. } => "conv2d".into(),
            Op::Unary(u) => u.name().into(),
            Op::Binary(b) => b.name().into(),
            Op::Reduce { op, .. } => op.name().into(),
            Op::Softmax { .. } => "softmax".into(),
            Op::LogSoftmax { .. } => "log_softmax".into(),
            Op::LayerNorm { .. } => "layernorm".into(),
            Op::Gather => "gather".into(),
            Op::Transpose { .. } => "transpose".into(),
            Op::Reshape { .. } => "reshape".into(),
            Op::Slice { .. } => "slice".into(),
            Op::Concat { .. } => "concat".into(),
            Op::Fused(k) => {
                let names: Vec<&str> = k.steps.iter().map(|s| s.op.name()).collect();
                format!("fused<{}>", names.join(","))
            }
        }
    }

    pub fn is_elementwise(&self) -> bool {
        matches!(self, Op::Unary(_) | Op::Binary(_))
    }

    /// Placeholders and constants are values, not computation.
    pub fn is_compute(&self) -> bool {
        !matches!(self, Op::Input { .. } | Op::Const(_))
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct GraphIr {
    pub(crate) nodes: Vec<Node>,
    pub(crate) input_specs: Vec<TensorSpec>,
    pub(crate) inputs: Vec<NodeId>,
    pub(crate) outputs: Vec<NodeId>,
    /// Node id -> (shape, dtype); complete after shape inference.
    pub(crate) shapes: Vec<Option<(Vec<usize>, DType)>>,
}

impl GraphIr {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn inputs(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn input_specs(&self) -> &[TensorSpec] {
        &self.input_specs
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    pub fn shape(&self, id: NodeId) -> Option<&[usize]> {
        self.shapes.get(id.0).and_then(|s| s.as_ref()).map(|(s, _)| s.as_slice())
    }

    pub fn dtype(&self, id: NodeId) -> Option<DType> {
        self.shapes.get(id.0).and_then(|s| s.as_ref()).map(|(_, d)| *d)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes that do work (everything except inputs and constants).
    pub fn compute_node_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.op.is_compute()).count()
    }

    pub fn fusion_group_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n.op, Op::Fused(_))).count()
    }

    /// Number of consumers per node, counting graph outputs as consumers.
    pub fn consumer_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0usize; self.nodes.len()];
        for n in &self.nodes {
            for i in &n.inputs {
                counts[i.0] += 1;
            }
        }
        for o in &self.outputs {
            counts[o.0] += 1;
        }
        counts
    }

    /// One node per line: `id: opkind(shape) <- inputs`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let shape = match self.shape(NodeId(i)) {
                Some(s) => format!("{:?}", s),
                None => "?".into(),
            };
            let inputs: Vec<String> = n.inputs.iter().map(|x| format!("{}", x.0)).collect();
            let _ = writeln!(out, "{}: {}({}) <- {}", i, n.op.kind(), shape, inputs.join(", "));
        }
        let outs: Vec<String> = self.outputs.iter().map(|x| format!("{}", x.0)).collect();
        let _ = writeln!(out, "outputs: {}", outs.join(", "));
        out
    }
}
