//! Graph rewrites: constant folding, dead-code elimination and elementwise
//! fusion. Every pass renumbers nodes densely and keeps topological order.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use super::execute::eval_node;
use super::fused::{ElementwiseOp, FusedKernel, FusedStep, Operand};
use super::shapes::infer_shapes;
use super::{GraphIr, Node, NodeId, Op};
use crate::{Reference, Result, Tensor};

/// Folds constants, removes dead nodes, then fuses elementwise chains.
/// Never increases the node count and is idempotent.
pub fn optimize(g: GraphIr) -> Result<GraphIr> {
    let g = if g.shapes.iter().all(Option::is_some) && g.shapes.len() == g.nodes.len() { g } else { infer_shapes(g)? };
    let g = fold_constants(g)?;
    let g = eliminate_dead_code(g)?;
    fuse_elementwise(g)
}

/// Replaces every compute node whose inputs are all constants by its value,
/// evaluated on the reference backend.
pub fn fold_constants(mut g: GraphIr) -> Result<GraphIr> {
    for i in 0..g.nodes.len() {
        let node = &g.nodes[i];
        if !node.op.is_compute() || node.inputs.is_empty() {
            continue;
        }
        let consts: Option<Vec<&Tensor>> = node
            .inputs
            .iter()
            .map(|x| match &g.nodes[x.0].op {
                Op::Const(t) => Some(t),
                _ => None,
            })
            .collect();
        let Some(args) = consts else { continue };
        let shape = g.shape(NodeId(i)).unwrap_or_default().to_vec();
        let value = eval_node(&node.op, &args, &shape, &Reference)?;
        g.nodes[i] = Node { op: Op::Const(value), inputs: Vec::new() };
    }
    Ok(g)
}

/// Keeps inputs and nodes that some output depends on.
pub fn eliminate_dead_code(g: GraphIr) -> Result<GraphIr> {
    let mut live = vec![false; g.nodes.len()];
    for o in &g.outputs {
        live[o.0] = true;
    }
    for i in (0..g.nodes.len()).rev() {
        if matches!(g.nodes[i].op, Op::Input { .. }) {
            live[i] = true;
        }
        if live[i] {
            for x in &g.nodes[i].inputs {
                live[x.0] = true;
            }
        }
    }
    Ok(rebuild(g, |i, _| live[i]))
}

fn rebuild(g: GraphIr, keep: impl Fn(usize, &Node) -> bool) -> GraphIr {
    let mut remap = vec![usize::MAX; g.nodes.len()];
    let mut nodes = Vec::new();
    let mut shapes = Vec::new();
    for (i, (node, shape)) in g.nodes.into_iter().zip(g.shapes).enumerate() {
        if !keep(i, &node) {
            continue;
        }
        remap[i] = nodes.len();
        let inputs = node.inputs.iter().map(|x| NodeId(remap[x.0])).collect();
        nodes.push(Node { op: node.op, inputs });
        shapes.push(shape);
    }
    GraphIr {
        nodes,
        input_specs: g.input_specs,
        inputs: g.inputs.iter().map(|x| NodeId(remap[x.0])).collect(),
        outputs: g.outputs.iter().map(|x| NodeId(remap[x.0])).collect(),
        shapes,
    }
}

fn union_root(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Merges each elementwise node into its elementwise consumer when it has
/// exactly one consumer, is not a graph output, and has the consumer's shape.
pub fn fuse_elementwise(g: GraphIr) -> Result<GraphIr> {
    let n = g.nodes.len();
    let consumers = g.consumer_counts();
    let is_output: Vec<bool> = {
        let mut v = vec![false; n];
        g.outputs.iter().for_each(|o| v[o.0] = true);
        v
    };
    let eligible = |i: usize| g.nodes[i].op.is_elementwise() && g.dtype(NodeId(i)).is_some_and(|d| d.is_float());

    // parent[i] points towards the group's root (its final consumer).
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if !eligible(i) {
            continue;
        }
        for x in &g.nodes[i].inputs {
            let p = x.0;
            if eligible(p)
                && consumers[p] == 1
                && !is_output[p]
                && g.shape(NodeId(p)) == g.shape(NodeId(i))
                && g.dtype(NodeId(p)) == g.dtype(NodeId(i))
            {
                parent[p] = i;
            }
        }
    }
    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        if eligible(i) {
            let r = union_root(&mut parent, i);
            members.entry(r).or_default().push(i);
        }
    }

    let mut fused_into_root = vec![false; n];
    let mut replacements: BTreeMap<usize, Node> = BTreeMap::new();
    for (&root, group) in &members {
        if group.len() < 2 {
            continue;
        }
        let position: BTreeMap<usize, usize> = group.iter().enumerate().map(|(s, &m)| (m, s)).collect();
        let mut externals: Vec<NodeId> = Vec::new();
        let mut steps = Vec::with_capacity(group.len());
        for &m in group {
            let node = &g.nodes[m];
            let args = node
                .inputs
                .iter()
                .map(|x| match position.get(&x.0) {
                    Some(&s) => Operand::Step(s),
                    None => {
                        let k = externals.iter().position(|e| e == x).unwrap_or_else(|| {
                            externals.push(*x);
                            externals.len() - 1
                        });
                        Operand::Input(k)
                    }
                })
                .collect();
            let op = match node.op {
                Op::Unary(u) => ElementwiseOp::Unary(u),
                Op::Binary(b) => ElementwiseOp::Binary(b),
                _ => unreachable!("only elementwise nodes are grouped"),
            };
            steps.push(FusedStep { op, args });
            if m != root {
                fused_into_root[m] = true;
            }
        }
        replacements.insert(root, Node { op: Op::Fused(FusedKernel { steps }), inputs: externals });
    }

    let mut g = g;
    for (root, node) in replacements {
        g.nodes[root] = node;
    }
    Ok(rebuild(g, |i, _| !fused_into_root[i]))
}
