//! Native execution, per-node VM execution and whole-graph VM execution.

use super::graph::{Graph, GraphError, Op};
use super::lower::{lower_graph, lower_node, GraphProgram, LowerError};
use super::model_file::model_digest;
use super::ops::{self, ShapeError};
use super::state::GraphState;
use super::tensor::{serialized_len, Tensor, TensorError};
use crate::fpvm::layout::OUTPUT_BASE;
use crate::fpvm::{PreimageOracle, VmError, VmState};
use crate::hash::Digest;

/// Budget for VM runs of generated programs, which always terminate.
pub const VM_STEP_BUDGET: u64 = 1 << 36;

#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("node {node}: {source}")]
    Shape { node: usize, source: ShapeError },
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error("vm: {0}")]
    Vm(#[from] VmError),
    #[error("vm trapped with exit code {code:#x}")]
    Trap { code: u8 },
    #[error("vm output is not a valid tensor: {0}")]
    Output(#[from] TensorError),
}

/// Evaluates node `id` given the outputs of all earlier nodes.
pub fn eval_node(graph: &Graph, id: usize, outputs: &[Tensor], input: &Tensor) -> Result<Tensor, ExecError> {
    let node = graph.node(id);
    let arg = |j: usize| &outputs[node.inputs[j]];
    let shape = |source| ExecError::Shape { node: id, source };
    Ok(match node.op {
        Op::Input => input.clone(),
        Op::Const => node.value.clone().expect("validated graph"),
        Op::MatMul => ops::matmul(arg(0), arg(1)).map_err(shape)?,
        Op::BiasAdd => ops::bias_add(arg(0), arg(1)).map_err(shape)?,
        Op::Relu => ops::relu(arg(0)),
        Op::ArgMax => ops::argmax_tensor(arg(0)),
    })
}

/// Flips the lowest bit of the first element: the injected node fault.
pub fn corrupt(t: &mut Tensor) {
    t.data_mut()[0] ^= 1;
}

#[derive(Clone, Debug)]
pub struct NativeRun {
    /// Output of every node, in node order.
    pub outputs: Vec<Tensor>,
    /// Graph-state commitments `S_0 ..= S_n`, one per computed node plus
    /// the empty initial state.
    pub commitments: Vec<Digest>,
    pub output_id: usize,
}

impl NativeRun {
    pub fn output(&self) -> &Tensor {
        &self.outputs[self.output_id]
    }

    /// Graph state after the first `t` nodes.
    pub fn state_at(&self, t: usize) -> GraphState {
        GraphState::from_outputs(&self.outputs[..t])
    }
}

pub fn execute_native(graph: &Graph, input: &Tensor) -> Result<NativeRun, ExecError> {
    execute_native_with_fault(graph, input, None)
}

/// Native run where node `fault` (if any) has its output corrupted before
/// later nodes consume it.
pub fn execute_native_with_fault(graph: &Graph, input: &Tensor, fault: Option<usize>) -> Result<NativeRun, ExecError> {
    graph.check_input(input)?;
    let mut outputs: Vec<Tensor> = Vec::with_capacity(graph.len());
    let mut state = GraphState::new();
    let mut commitments = Vec::with_capacity(graph.len() + 1);
    commitments.push(state.commitment());
    for id in 0..graph.len() {
        let mut out = eval_node(graph, id, &outputs, input)?;
        if fault == Some(id) {
            corrupt(&mut out);
        }
        state.push(&out);
        commitments.push(state.commitment());
        outputs.push(out);
    }
    Ok(NativeRun {
        outputs,
        commitments,
        output_id: graph.output_id(),
    })
}

/// Initial VM state and oracle for computing node `id` from `operands`.
pub fn node_vm(graph: &Graph, id: usize, operands: &[&Tensor]) -> Result<(VmState, PreimageOracle), ExecError> {
    let program = lower_node(graph, id)?;
    let mut oracle = PreimageOracle::new();
    let mut keys = Vec::with_capacity(32 * operands.len());
    for t in operands {
        let key = oracle
            .insert(t.to_bytes())
            .expect("graph validation bounds tensor size");
        keys.extend_from_slice(key.as_bytes());
    }
    let vm = VmState::load_program(&program, &keys, model_digest(graph).as_bytes())
        .expect("program and keys fit their regions");
    Ok((vm, oracle))
}

/// Reads the serialized tensor of `shape` from the output region.
pub fn read_output(vm: &VmState, shape: &[usize]) -> Result<Tensor, ExecError> {
    if vm.exit_code() != 0 {
        return Err(ExecError::Trap { code: vm.exit_code() });
    }
    let bytes = vm.read_bytes(OUTPUT_BASE, serialized_len(shape));
    Ok(Tensor::from_bytes(&bytes)?)
}

/// Runs node `id` in the VM.
pub fn run_node_vm(graph: &Graph, id: usize, operands: &[&Tensor]) -> Result<(Tensor, u64), ExecError> {
    let (vm, oracle) = node_vm(graph, id, operands)?;
    let run = vm.run(&oracle, VM_STEP_BUDGET)?;
    Ok((read_output(&run.state, graph.shape(id))?, run.steps))
}

#[derive(Clone, Debug)]
pub struct VmRun {
    pub output: Tensor,
    /// VM steps spent on each node (zero for data nodes).
    pub node_steps: Vec<u64>,
}

/// Computes every compute node through its lowered program.
pub fn execute_via_vm(graph: &Graph, input: &Tensor) -> Result<VmRun, ExecError> {
    graph.check_input(input)?;
    let mut outputs: Vec<Tensor> = Vec::with_capacity(graph.len());
    let mut node_steps = Vec::with_capacity(graph.len());
    for (id, node) in graph.nodes().iter().enumerate() {
        let (out, steps) = if node.op.is_data() {
            (eval_node(graph, id, &outputs, input)?, 0)
        } else {
            let operands: Vec<&Tensor> = node.inputs.iter().map(|&i| &outputs[i]).collect();
            run_node_vm(graph, id, &operands)?
        };
        outputs.push(out);
        node_steps.push(steps);
    }
    Ok(VmRun {
        output: outputs.swap_remove(graph.output_id()),
        node_steps,
    })
}

/// Initial state of the whole-graph program.
pub fn graph_vm(graph: &Graph, input: &Tensor) -> Result<(VmState, GraphProgram), ExecError> {
    graph.check_input(input)?;
    let gp = lower_graph(graph, input)?;
    let vm =
        VmState::load_program(&gp.program, &gp.input_image, &gp.model_image).expect("graph images fit their regions");
    Ok((vm, gp))
}

/// Runs the whole graph as one VM program; returns the output and step count.
pub fn execute_graph_vm(graph: &Graph, input: &Tensor) -> Result<(Tensor, u64), ExecError> {
    let (vm, _) = graph_vm(graph, input)?;
    let run = vm.run(&PreimageOracle::new(), VM_STEP_BUDGET)?;
    Ok((read_output(&run.state, graph.shape(graph.output_id()))?, run.steps))
}
