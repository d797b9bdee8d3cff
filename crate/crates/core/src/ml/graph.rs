//! Computation graphs: topologically ordered nodes with inferred shapes.

use std::fmt;

use rand::Rng;

use super::ops::{self, ShapeError};
use super::tensor::{self, quantize_value, serialized_len, Tensor, TensorError};
use crate::fpvm::layout::MAX_PREIMAGE_BYTES;

/// Node ids index the phase-1 state tree in 128 KiB fields.
pub const MAX_NODES: usize = 1 << 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Op {
    Input = 0,
    Const = 1,
    MatMul = 2,
    BiasAdd = 3,
    Relu = 4,
    ArgMax = 5,
}

impl Op {
    pub fn from_u8(b: u8) -> Option<Op> {
        Some(match b {
            0 => Op::Input,
            1 => Op::Const,
            2 => Op::MatMul,
            3 => Op::BiasAdd,
            4 => Op::Relu,
            5 => Op::ArgMax,
            _ => return None,
        })
    }

    pub fn arity(self) -> usize {
        match self {
            Op::Input | Op::Const => 0,
            Op::Relu | Op::ArgMax => 1,
            Op::MatMul | Op::BiasAdd => 2,
        }
    }

    /// Input and Const nodes carry data; the rest compute.
    pub fn is_data(self) -> bool {
        matches!(self, Op::Input | Op::Const)
    }

    pub fn name(self) -> &'static str {
        match self {
            Op::Input => "Input",
            Op::Const => "Const",
            Op::MatMul => "MatMul",
            Op::BiasAdd => "BiasAdd",
            Op::Relu => "ReLU",
            Op::ArgMax => "ArgMax",
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub op: Op,
    pub inputs: Vec<usize>,
    /// Declared shape of an Input node.
    pub input_shape: Option<Vec<usize>>,
    /// Value of a Const node.
    pub value: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("graph has no nodes")]
    Empty,
    #[error("graph has {0} nodes, more than {MAX_NODES}")]
    TooManyNodes(usize),
    #[error("node {node}: {op} takes {expected} inputs, got {got}")]
    Arity {
        node: usize,
        op: Op,
        expected: usize,
        got: usize,
    },
    #[error("node {node} refers to node {input}, which does not precede it")]
    NotTopological { node: usize, input: usize },
    #[error("node {0}: missing payload")]
    MissingPayload(usize),
    #[error("graph must have exactly one Input node, found {0}")]
    InputCount(usize),
    #[error("output node {0} does not exist")]
    BadOutput(usize),
    #[error("node {node}: {source}")]
    Shape { node: usize, source: ShapeError },
    #[error("node {node}: {source}")]
    Tensor { node: usize, source: TensorError },
    #[error("node {node}: output of {bytes} bytes exceeds the {MAX_PREIMAGE_BYTES} byte field")]
    OutputTooLarge { node: usize, bytes: usize },
    #[error("input shape {got:?} does not match declared {expected:?}")]
    InputShape { expected: Vec<usize>, got: Vec<usize> },
}

/// Validated graph. Node ids are positions in `nodes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    nodes: Vec<Node>,
    output: usize,
    shapes: Vec<Vec<usize>>,
    input: usize,
}

impl Graph {
    pub fn new(nodes: Vec<Node>, output: usize) -> Result<Self, GraphError> {
        if nodes.is_empty() {
            return Err(GraphError::Empty);
        }
        if nodes.len() > MAX_NODES {
            return Err(GraphError::TooManyNodes(nodes.len()));
        }
        if output >= nodes.len() {
            return Err(GraphError::BadOutput(output));
        }
        let inputs: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].op == Op::Input).collect();
        if inputs.len() != 1 {
            return Err(GraphError::InputCount(inputs.len()));
        }
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.iter().enumerate() {
            if node.inputs.len() != node.op.arity() {
                return Err(GraphError::Arity {
                    node: id,
                    op: node.op,
                    expected: node.op.arity(),
                    got: node.inputs.len(),
                });
            }
            if let Some(&bad) = node.inputs.iter().find(|&&i| i >= id) {
                return Err(GraphError::NotTopological { node: id, input: bad });
            }
            let shape_err = |source| GraphError::Shape { node: id, source };
            let shape = match node.op {
                Op::Input => {
                    let s = node.input_shape.clone().ok_or(GraphError::MissingPayload(id))?;
                    tensor::check_shape(&s).map_err(|source| GraphError::Tensor { node: id, source })?;
                    s
                }
                Op::Const => node
                    .value
                    .as_ref()
                    .ok_or(GraphError::MissingPayload(id))?
                    .shape()
                    .to_vec(),
                Op::MatMul => ops::matmul_shape(&shapes[node.inputs[0]], &shapes[node.inputs[1]]).map_err(shape_err)?,
                Op::BiasAdd => {
                    ops::bias_add_shape(&shapes[node.inputs[0]], &shapes[node.inputs[1]]).map_err(shape_err)?
                }
                Op::Relu => shapes[node.inputs[0]].clone(),
                Op::ArgMax => vec![1],
            };
            let bytes = serialized_len(&shape);
            if bytes > MAX_PREIMAGE_BYTES {
                return Err(GraphError::OutputTooLarge { node: id, bytes });
            }
            shapes.push(shape);
        }
        Ok(Graph {
            input: inputs[0],
            nodes,
            output,
            shapes,
        })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn output_id(&self) -> usize {
        self.output
    }

    pub fn input_id(&self) -> usize {
        self.input
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[self.input]
    }

    pub fn shape(&self, id: usize) -> &[usize] {
        &self.shapes[id]
    }

    pub fn compute_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(|&i| !self.nodes[i].op.is_data())
    }

    pub fn check_input(&self, input: &Tensor) -> Result<(), GraphError> {
        if input.shape() != self.input_shape() {
            return Err(GraphError::InputShape {
                expected: self.input_shape().to_vec(),
                got: input.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Incremental construction; `finish` validates.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, inputs: Vec<usize>, input_shape: Option<Vec<usize>>, value: Option<Tensor>) -> usize {
        self.nodes.push(Node {
            op,
            inputs,
            input_shape,
            value,
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, shape: Vec<usize>) -> usize {
        self.push(Op::Input, vec![], Some(shape), None)
    }

    pub fn constant(&mut self, value: Tensor) -> usize {
        self.push(Op::Const, vec![], None, Some(value))
    }

    pub fn matmul(&mut self, a: usize, b: usize) -> usize {
        self.push(Op::MatMul, vec![a, b], None, None)
    }

    pub fn bias_add(&mut self, x: usize, b: usize) -> usize {
        self.push(Op::BiasAdd, vec![x, b], None, None)
    }

    pub fn relu(&mut self, x: usize) -> usize {
        self.push(Op::Relu, vec![x], None, None)
    }

    pub fn argmax(&mut self, x: usize) -> usize {
        self.push(Op::ArgMax, vec![x], None, None)
    }

    pub fn finish(self, output: usize) -> Result<Graph, GraphError> {
        Graph::new(self.nodes, output)
    }
}

fn random_tensor<R: Rng>(rng: &mut R, shape: Vec<usize>, scale: f64) -> Tensor {
    let n = shape.iter().product();
    let values: Vec<f64> = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor::quantize(shape, &values).expect("values in range")
}

/// Fully connected ReLU network over `dims` (input width first). Hidden
/// layers apply ReLU; an optional ArgMax head follows the last layer.
pub fn random_mlp<R: Rng>(rng: &mut R, dims: &[usize], argmax_head: bool) -> Result<Graph, GraphError> {
    assert!(dims.len() >= 2, "an MLP needs at least input and output widths");
    let mut g = GraphBuilder::new();
    let mut x = g.input(vec![1, dims[0]]);
    for (layer, w) in dims.windows(2).enumerate() {
        let weights = g.constant(random_tensor(rng, vec![w[0], w[1]], 1.0));
        let bias = g.constant(random_tensor(rng, vec![w[1]], 0.5));
        x = g.matmul(x, weights);
        x = g.bias_add(x, bias);
        if layer + 2 < dims.len() {
            x = g.relu(x);
        }
    }
    if argmax_head {
        x = g.argmax(x);
    }
    g.finish(x)
}

pub fn random_input<R: Rng>(rng: &mut R, shape: Vec<usize>) -> Tensor {
    random_tensor(rng, shape, 2.0)
}

/// Exact quantization of `v` repeated over `shape`; handy for hand-built tests.
pub fn filled(shape: Vec<usize>, v: f64) -> Result<Tensor, TensorError> {
    let raw = quantize_value(v)?;
    let n = tensor::check_shape(&shape)?;
    Tensor::new(shape, vec![raw; n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mlp_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_mlp(&mut rng, &[4, 8, 3], false).unwrap();
        assert_eq!(g.shape(g.output_id()), &[1, 3]);
        // input, (W, b, matmul, add) x2, relu once
        assert_eq!(g.len(), 1 + 4 * 2 + 1);
        assert_eq!(g.compute_nodes().count(), 5);
    }

    #[test]
    fn validation_errors() {
        let mut b = GraphBuilder::new();
        let x = b.input(vec![1, 2]);
        let w = b.constant(filled(vec![3, 2], 1.0).unwrap());
        let y = b.matmul(x, w);
        assert!(matches!(b.finish(y), Err(GraphError::Shape { node: 2, .. })));

        let nodes = vec![Node {
            op: Op::Relu,
            inputs: vec![0],
            input_shape: None,
            value: None,
        }];
        assert!(matches!(
            Graph::new(nodes, 0),
            Err(GraphError::Arity { .. } | GraphError::InputCount(_))
        ));

        let mut b = GraphBuilder::new();
        let x = b.input(vec![1, 2]);
        let _ = b.input(vec![1, 2]);
        assert_eq!(b.finish(x), Err(GraphError::InputCount(2)));

        let mut b = GraphBuilder::new();
        b.input(vec![1, 2]);
        assert_eq!(b.finish(5), Err(GraphError::BadOutput(5)));
    }

    #[test]
    fn forward_references_rejected() {
        let nodes = vec![
            Node {
                op: Op::Input,
                inputs: vec![],
                input_shape: Some(vec![2]),
                value: None,
            },
            Node {
                op: Op::Relu,
                inputs: vec![1],
                input_shape: None,
                value: None,
            },
        ];
        assert_eq!(
            Graph::new(nodes, 1),
            Err(GraphError::NotTopological { node: 1, input: 1 })
        );
    }
}
