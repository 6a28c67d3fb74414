use alloc::format;
use alloc::vec::Vec;

use super::shapes::{infer_shapes, node_signature};
use super::{GraphIr, Node, NodeId, Op, TensorSpec};
use crate::ops::{Ops, Program};
use crate::{BinaryOp, DType, Error, ReduceOp, Result, Tensor, UnaryOp};

/// [`Ops`] implementation that records nodes instead of computing.
pub struct Tracer {
    graph: GraphIr,
}

impl Tracer {
    fn new(specs: &[TensorSpec]) -> Result<Self> {
        let mut graph = GraphIr {
            nodes: Vec::new(),
            input_specs: specs.to_vec(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            shapes: Vec::new(),
        };
        for (index, spec) in specs.iter().enumerate() {
            let shape = spec
                .static_shape()
                .ok_or_else(|| Error::Capture(format!("input {index} has a dynamic shape {:?}", spec.shape)))?;
            graph.nodes.push(Node { op: Op::Input { index }, inputs: Vec::new() });
            graph.shapes.push(Some((shape, spec.dtype)));
            graph.inputs.push(NodeId(index));
        }
        Ok(Tracer { graph })
    }

    fn add(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        let shapes: Vec<&[usize]> = inputs.iter().map(|x| self.graph.shape(*x).expect("traced node")).collect();
        let dtypes: Vec<DType> = inputs.iter().map(|x| self.graph.dtype(*x).expect("traced node")).collect();
        let sig = node_signature(&op, &shapes, &dtypes)?;
        self.graph.nodes.push(Node { op, inputs: inputs.to_vec() });
        self.graph.shapes.push(Some(sig));
        Ok(NodeId(self.graph.nodes.len() - 1))
    }
}

impl Ops for Tracer {
    type Value = NodeId;

    fn constant(&mut self, t: Tensor) -> Result<NodeId> {
        self.graph.nodes.push(Node { op: Op::Const(t.clone()), inputs: Vec::new() });
        self.graph.shapes.push(Some((t.shape().to_vec(), t.dtype())));
        Ok(NodeId(self.graph.nodes.len() - 1))
    }
    fn shape(&self, v: &NodeId) -> Vec<usize> {
        self.graph.shape(*v).expect("traced node").to_vec()
    }
    fn dtype(&self, v: &NodeId) -> DType {
        self.graph.dtype(*v).expect("traced node")
    }
    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.add(Op::MatMul, &[*a, *b])
    }
    fn conv2d(&mut self, x: &NodeId, w: &NodeId, stride: usize, padding: usize) -> Result<NodeId> {
        self.add(Op::Conv2d { stride, padding }, &[*x, *w])
    }
    fn unary(&mut self, op: UnaryOp, x: &NodeId) -> Result<NodeId> {
        self.add(Op::Unary(op), &[*x])
    }
    fn binary(&mut self, op: BinaryOp, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.add(Op::Binary(op), &[*a, *b])
    }
    fn reduce(&mut self, op: ReduceOp, x: &NodeId, axis: usize, keep_dim: bool) -> Result<NodeId> {
        self.add(Op::Reduce { op, axis, keep_dim }, &[*x])
    }
    fn softmax(&mut self, x: &NodeId, axis: usize) -> Result<NodeId> {
        self.add(Op::Softmax { axis }, &[*x])
    }
    fn log_softmax(&mut self, x: &NodeId, axis: usize) -> Result<NodeId> {
        self.add(Op::LogSoftmax { axis }, &[*x])
    }
    fn layernorm(&mut self, x: &NodeId, gamma: &NodeId, beta: &NodeId, eps: f64) -> Result<NodeId> {
        self.add(Op::LayerNorm { eps }, &[*x, *gamma, *beta])
    }
    fn gather(&mut self, table: &NodeId, ids: &NodeId) -> Result<NodeId> {
        self.add(Op::Gather, &[*table, *ids])
    }
    fn transpose(&mut self, x: &NodeId, perm: &[usize]) -> Result<NodeId> {
        self.add(Op::Transpose { perm: perm.to_vec() }, &[*x])
    }
    fn reshape(&mut self, x: &NodeId, shape: &[usize]) -> Result<NodeId> {
        self.add(Op::Reshape { shape: shape.to_vec() }, &[*x])
    }
    fn slice(&mut self, x: &NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.add(Op::Slice { axis, start, end }, &[*x])
    }
    fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        self.add(Op::Concat { axis }, xs)
    }
    fn to_host(&mut self, _v: &NodeId) -> Result<Tensor> {
        Err(Error::Capture("reading tensor values on the host is data-dependent and cannot be captured".into()))
    }
}

/// Traces `program` with placeholders matching `specs`.
pub fn capture<P: Program + ?Sized>(program: &P, specs: &[TensorSpec]) -> Result<GraphIr> {
    let mut tracer = Tracer::new(specs)?;
    let placeholders: Vec<NodeId> = tracer.graph.inputs.clone();
    let outputs = program.run(&mut tracer, &placeholders)?;
    tracer.graph.outputs = outputs;
    infer_shapes(tracer.graph)
}
