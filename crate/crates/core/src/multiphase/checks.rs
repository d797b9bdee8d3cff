//! Consistency checks that connect the graph-level state of phase 1 with the
//! VM states of phase 2.
//!
//! Entrance: the operand fields of the agreed `S_t` determine the initial VM
//! state of node `t`. Exit: the output region of a final VM state gives the
//! value root of node `t`. Transition: `S_{t+1}` is `S_t` with node `t`'s
//! field set to that root and nothing else changed.

use crate::fpvm::asm::words_to_bytes;
use crate::fpvm::layout::{
    INPUT_BASE, INPUT_FIELD_LEVEL, MODEL_BASE, MODEL_FIELD_LEVEL, OUTPUT_BASE, OUTPUT_FIELD_LEVEL, PROGRAM_BASE,
    PROGRAM_FIELD_LEVEL,
};
use crate::fpvm::{state_root_from, CpuState, VmState};
use crate::hash::Digest;
use crate::merkle::{compose_root, region_root, verify, zero_hashes, MerkleError, MerkleProof, LEAF_BYTES};
use crate::ml::graph::Graph;
use crate::ml::lower::{lower_node, LowerError};
use crate::ml::model_file::model_digest;
use crate::ml::state::{out_field_base, GraphState, OUT_FIELD_LEVEL};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckError {
    #[error("node {0} is not a compute node")]
    NotCompute(usize),
    #[error("expected {expected} operand openings, got {got}")]
    OperandCount { expected: usize, got: usize },
    #[error("opening {index} is for node {got}, expected node {expected}")]
    OperandNode { index: usize, expected: usize, got: usize },
    #[error("operand {0} does not open against the agreed state")]
    OperandProof(usize),
    #[error("claimed entrance root does not match the operands")]
    EntranceRoot,
    #[error("final VM state does not match its opening")]
    ExitState,
    #[error("VM did not halt cleanly (exited={exited}, code={code})")]
    ExitCode { exited: bool, code: u8 },
    #[error("output region does not open against the final memory root")]
    OutputProof,
    #[error("field proof is not for node {0}")]
    FieldPosition(usize),
    #[error("node field was not empty before the transition")]
    FieldNotEmpty,
    #[error("post state is not the pre state with the node field set")]
    TransitionMismatch,
    #[error(transparent)]
    Lower(#[from] LowerError),
    #[error(transparent)]
    Merkle(#[from] MerkleError),
}

/// A node field's root, proven against a graph state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldOpening {
    pub node: usize,
    pub root: Digest,
    pub proof: MerkleProof,
}

impl FieldOpening {
    pub fn from_state(state: &GraphState, node: usize) -> Self {
        FieldOpening {
            node,
            root: state.field_root(node),
            proof: state.prove_field(node).expect("aligned node field"),
        }
    }

    fn at_node(&self, node: usize) -> bool {
        self.node == node
            && self.proof.subtree_level == OUT_FIELD_LEVEL
            && self.proof.leaf_index as u64 * LEAF_BYTES as u64 == out_field_base(node) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EntranceBundle {
    pub operands: Vec<FieldOpening>,
    pub m0_root: Digest,
}

/// VM entrance root for compute node `t` given its operands' value roots.
pub fn entrance_root(graph: &Graph, t: usize, operand_roots: &[Digest]) -> Result<Digest, CheckError> {
    if graph.node(t).op.is_data() {
        return Err(CheckError::NotCompute(t));
    }
    let program = words_to_bytes(&lower_node(graph, t)?);
    let keys: Vec<u8> = operand_roots.iter().flat_map(|d| d.0).collect();
    let mem = compose_root(&[
        (
            PROGRAM_BASE,
            PROGRAM_FIELD_LEVEL,
            region_root(&program, PROGRAM_FIELD_LEVEL)?,
        ),
        (INPUT_BASE, INPUT_FIELD_LEVEL, region_root(&keys, INPUT_FIELD_LEVEL)?),
        (
            MODEL_BASE,
            MODEL_FIELD_LEVEL,
            region_root(model_digest(graph).as_bytes(), MODEL_FIELD_LEVEL)?,
        ),
    ])?;
    Ok(state_root_from(&CpuState::default(), &mem))
}

/// Opens node `t`'s operands in `pre` (the state before node `t`).
pub fn build_entrance(graph: &Graph, t: usize, pre: &GraphState) -> Result<EntranceBundle, CheckError> {
    let operands: Vec<FieldOpening> = graph
        .node(t)
        .inputs
        .iter()
        .map(|&op| FieldOpening::from_state(pre, op))
        .collect();
    let roots: Vec<Digest> = operands.iter().map(|o| o.root).collect();
    Ok(EntranceBundle {
        m0_root: entrance_root(graph, t, &roots)?,
        operands,
    })
}

pub fn entrance_check(graph: &Graph, t: usize, pre_root: &Digest, b: &EntranceBundle) -> Result<(), CheckError> {
    let inputs = &graph.node(t).inputs;
    if b.operands.len() != inputs.len() {
        return Err(CheckError::OperandCount {
            expected: inputs.len(),
            got: b.operands.len(),
        });
    }
    for (index, (o, &op)) in b.operands.iter().zip(inputs).enumerate() {
        if !o.at_node(op) {
            return Err(CheckError::OperandNode {
                index,
                expected: op,
                got: o.node,
            });
        }
        if !verify(pre_root, &o.root, &o.proof) {
            return Err(CheckError::OperandProof(index));
        }
    }
    let roots: Vec<Digest> = b.operands.iter().map(|o| o.root).collect();
    if entrance_root(graph, t, &roots)? != b.m0_root {
        return Err(CheckError::EntranceRoot);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExitBundle {
    pub cpu: CpuState,
    pub memory_root: Digest,
    pub output_root: Digest,
    pub output_proof: MerkleProof,
}

pub fn build_exit(last: &VmState) -> ExitBundle {
    ExitBundle {
        cpu: last.cpu.clone(),
        memory_root: last.memory.root(),
        output_root: last
            .memory
            .subtree_root(OUTPUT_BASE, OUTPUT_FIELD_LEVEL)
            .expect("aligned output region"),
        output_proof: last
            .memory
            .prove_region(OUTPUT_BASE, OUTPUT_FIELD_LEVEL)
            .expect("aligned output region"),
    }
}

/// Checks the opening of a final VM state and returns the output root.
pub fn exit_check(final_root: &Digest, b: &ExitBundle) -> Result<Digest, CheckError> {
    if state_root_from(&b.cpu, &b.memory_root) != *final_root {
        return Err(CheckError::ExitState);
    }
    if !b.cpu.exited || b.cpu.exit_code != 0 {
        return Err(CheckError::ExitCode {
            exited: b.cpu.exited,
            code: b.cpu.exit_code,
        });
    }
    let p = &b.output_proof;
    if p.subtree_level != OUTPUT_FIELD_LEVEL
        || p.leaf_index as u64 * LEAF_BYTES as u64 != OUTPUT_BASE as u64
        || !verify(&b.memory_root, &b.output_root, p)
    {
        return Err(CheckError::OutputProof);
    }
    Ok(b.output_root)
}

/// `post` must be `pre` with node `t`'s empty field replaced by `value_root`.
/// The same siblings prove both, so nothing else can differ.
pub fn transition_check(
    t: usize,
    pre_root: &Digest,
    post_root: &Digest,
    value_root: &Digest,
    proof: &MerkleProof,
) -> Result<(), CheckError> {
    if proof.subtree_level != OUT_FIELD_LEVEL || proof.leaf_index as u64 * LEAF_BYTES as u64 != out_field_base(t) as u64
    {
        return Err(CheckError::FieldPosition(t));
    }
    if !verify(pre_root, &zero_hashes()[OUT_FIELD_LEVEL as usize], proof) {
        return Err(CheckError::FieldNotEmpty);
    }
    if !verify(post_root, value_root, proof) {
        return Err(CheckError::TransitionMismatch);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpvm::oracle::preimage_key;
    use crate::fpvm::PreimageOracle;
    use crate::ml::exec::{execute_native, node_vm};
    use crate::ml::graph::random_input;
    use crate::ml::graph::random_mlp;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (Graph, crate::ml::exec::NativeRun) {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_mlp(&mut rng, &[4, 5, 3], true).unwrap();
        let x = random_input(&mut rng, g.input_shape().to_vec());
        let run = execute_native(&g, &x).unwrap();
        (g, run)
    }

    #[test]
    fn entrance_root_matches_loaded_vm() {
        let (g, run) = setup();
        for t in g.compute_nodes() {
            let pre = run.state_at(t);
            let b = build_entrance(&g, t, &pre).unwrap();
            let ops: Vec<_> = g.node(t).inputs.iter().map(|&i| &run.outputs[i]).collect();
            let (vm, _) = node_vm(&g, t, &ops).unwrap();
            assert_eq!(b.m0_root, vm.state_root(), "node {t}");
            entrance_check(&g, t, &run.commitments[t], &b).unwrap();
        }
    }

    #[test]
    fn entrance_rejects_tampering() {
        let (g, run) = setup();
        let t = g.compute_nodes().next().unwrap();
        let pre = &run.commitments[t];
        let good = build_entrance(&g, t, &run.state_at(t)).unwrap();
        let mut b = good.clone();
        b.m0_root = b.m0_root.flip_bit(3);
        assert_eq!(entrance_check(&g, t, pre, &b), Err(CheckError::EntranceRoot));
        let mut b = good.clone();
        b.operands[0].root = b.operands[0].root.flip_bit(0);
        assert_eq!(entrance_check(&g, t, pre, &b), Err(CheckError::OperandProof(0)));
        let mut b = good.clone();
        b.operands.swap(0, 1);
        assert!(matches!(
            entrance_check(&g, t, pre, &b),
            Err(CheckError::OperandNode { .. })
        ));
        b.operands.pop();
        assert!(matches!(
            entrance_check(&g, t, pre, &b),
            Err(CheckError::OperandCount { .. })
        ));
        assert_eq!(entrance_root(&g, 0, &[]), Err(CheckError::NotCompute(0)));
    }

    #[test]
    fn exit_and_transition_close_the_loop() {
        let (g, run) = setup();
        for t in g.compute_nodes() {
            let ops: Vec<_> = g.node(t).inputs.iter().map(|&i| &run.outputs[i]).collect();
            let (vm, oracle): (VmState, PreimageOracle) = node_vm(&g, t, &ops).unwrap();
            let last = vm.run(&oracle, 1 << 30).unwrap().state;
            let b = build_exit(&last);
            let r_o = exit_check(&last.state_root(), &b).unwrap();
            assert_eq!(r_o, preimage_key(&run.outputs[t].to_bytes()).unwrap());
            let post = run.state_at(t + 1);
            let p = post.prove_field(t).unwrap();
            transition_check(t, &run.commitments[t], &run.commitments[t + 1], &r_o, &p).unwrap();
            assert_eq!(
                transition_check(t, &run.commitments[t], &run.commitments[t + 1], &r_o.flip_bit(1), &p),
                Err(CheckError::TransitionMismatch)
            );
            assert_eq!(
                transition_check(t, &run.commitments[t + 1], &run.commitments[t + 1], &r_o, &p),
                Err(CheckError::FieldNotEmpty)
            );
            let mut bad = b.clone();
            bad.cpu.regs[3] ^= 1;
            assert_eq!(exit_check(&last.state_root(), &bad), Err(CheckError::ExitState));
        }
    }
}
