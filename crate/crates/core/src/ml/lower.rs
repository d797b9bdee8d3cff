//! Lowering of graph operators to MiniVM code.
//!
//! Every operator writes a serialized tensor (header words, then data) so the
//! VM output region can be compared byte for byte with the native result.
//!
//! Matmul cannot shift each product separately and stay exact, and a 64-bit
//! accumulator is not available. Instead each product contributes its
//! `MULFX` (floor of product / 2^16) to a 32-bit accumulator and its low 16
//! bits to a separate fraction counter; adding `fraction >> 16` at the end
//! reconstructs bits 16..47 of the exact sum, which is the native result.
//! The fraction counter stays below 2^31 while K <= 32768, which the tensor
//! size limit guarantees.

use super::graph::{Graph, Op};
use super::tensor::{serialized_len, Tensor};
use crate::fpvm::asm::{AsmError, Assembler, ZERO};
use crate::fpvm::layout::{HEAP_BASE, INPUT_BASE, MODEL_BASE, ORACLE_KEY_BASE, ORACLE_VALUE_BASE, OUTPUT_BASE};
use crate::merkle::LEAF_BYTES;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LowerError {
    #[error("node {0} is a {1} node and has no program")]
    Unsupported(usize, Op),
    #[error(transparent)]
    Asm(#[from] AsmError),
}

// Register roles shared by the emitters.
const PA: u8 = 1;
const PB: u8 = 2;
const PO: u8 = 3;
const ACC: u8 = 4;
const FRAC_SUM: u8 = 5;
const VA: u8 = 6;
const VB: u8 = 7;
const TMP: u8 = 8;
const END: u8 = 9;
const STRIDE: u8 = 10;
const MASK: u8 = 11;
const COL: u8 = 12;
const FOUR: u8 = 13;
const ROW: u8 = 14;
const SCRATCH: u8 = 15;

fn data_offset(shape: &[usize]) -> u32 {
    4 * (1 + shape.len() as u32)
}

fn leaves_for(bytes: usize) -> u32 {
    bytes.div_ceil(LEAF_BYTES) as u32
}

fn emit_header(a: &mut Assembler, base: u32, shape: &[usize]) {
    a.li(SCRATCH, base);
    a.li(TMP, shape.len() as u32);
    a.sw(TMP, SCRATCH, 0);
    for (i, &d) in shape.iter().enumerate() {
        a.li(TMP, d as u32);
        a.sw(TMP, SCRATCH, 4 * (i as i32 + 1));
    }
}

fn emit_matmul(a: &mut Assembler, pa: u32, pb: u32, out: u32, m: usize, k: usize, n: usize) {
    let (m, k, n) = (m as u32, k as u32, n as u32);
    a.li(FOUR, 4);
    a.li(STRIDE, 4 * n);
    a.li(MASK, 0xFFFF);
    a.li(ROW, pa);
    a.li(PO, out);
    let row_loop = a.here();
    a.li(COL, pb);
    let col_loop = a.here();
    a.mov(PA, ROW);
    a.mov(PB, COL);
    a.li(END, 4 * k);
    a.add(END, END, ROW);
    a.add(ACC, ZERO, ZERO);
    a.add(FRAC_SUM, ZERO, ZERO);
    let inner = a.here();
    a.lw(VA, PA, 0);
    a.lw(VB, PB, 0);
    a.mulfx(TMP, VA, VB);
    a.add(ACC, ACC, TMP);
    a.mul(TMP, VA, VB);
    a.and(TMP, TMP, MASK);
    a.add(FRAC_SUM, FRAC_SUM, TMP);
    a.add(PA, PA, FOUR);
    a.add(PB, PB, STRIDE);
    a.blt(PA, END, inner);
    a.sra(FRAC_SUM, FRAC_SUM, 16);
    a.add(ACC, ACC, FRAC_SUM);
    a.sw(ACC, PO, 0);
    a.add(PO, PO, FOUR);
    a.add(COL, COL, FOUR);
    a.li(SCRATCH, pb + 4 * n);
    a.blt(COL, SCRATCH, col_loop);
    a.li(SCRATCH, 4 * k);
    a.add(ROW, ROW, SCRATCH);
    a.li(SCRATCH, pa + 4 * m * k);
    a.blt(ROW, SCRATCH, row_loop);
}

fn emit_bias_add(a: &mut Assembler, px: u32, pb: u32, out: u32, total: usize, n: usize) {
    a.li(FOUR, 4);
    a.li(PA, px);
    a.li(PO, out);
    a.li(END, px + 4 * total as u32);
    let row_loop = a.here();
    a.li(PB, pb);
    a.li(COL, pb + 4 * n as u32);
    let col_loop = a.here();
    a.lw(VA, PA, 0);
    a.lw(VB, PB, 0);
    a.add(TMP, VA, VB);
    a.sw(TMP, PO, 0);
    a.add(PA, PA, FOUR);
    a.add(PB, PB, FOUR);
    a.add(PO, PO, FOUR);
    a.blt(PB, COL, col_loop);
    a.blt(PA, END, row_loop);
}

fn emit_relu(a: &mut Assembler, px: u32, out: u32, len: usize) {
    a.li(FOUR, 4);
    a.li(PA, px);
    a.li(PO, out);
    a.li(END, px + 4 * len as u32);
    let top = a.here();
    let negative = a.new_label();
    let next = a.new_label();
    a.lw(VA, PA, 0);
    a.blt(VA, ZERO, negative);
    a.sw(VA, PO, 0);
    a.jmp(next);
    a.bind(negative);
    a.sw(ZERO, PO, 0);
    a.bind(next);
    a.add(PA, PA, FOUR);
    a.add(PO, PO, FOUR);
    a.blt(PA, END, top);
}

/// Strict comparison keeps the first maximum.
fn emit_argmax(a: &mut Assembler, px: u32, out: u32, len: usize) {
    const BEST: u8 = ACC;
    const BEST_IDX: u8 = FRAC_SUM;
    const IDX: u8 = PB;
    const ONE: u8 = ROW;
    a.li(FOUR, 4);
    a.li(ONE, 1);
    a.li(PA, px);
    a.li(END, px + 4 * len as u32);
    a.lw(BEST, PA, 0);
    a.add(BEST_IDX, ZERO, ZERO);
    a.add(IDX, ZERO, ZERO);
    let check = a.new_label();
    let body = a.new_label();
    let update = a.new_label();
    let done = a.new_label();
    a.bind(check);
    a.add(PA, PA, FOUR);
    a.add(IDX, IDX, ONE);
    a.blt(PA, END, body);
    a.jmp(done);
    a.bind(body);
    a.lw(VA, PA, 0);
    a.blt(BEST, VA, update);
    a.jmp(check);
    a.bind(update);
    a.mov(BEST, VA);
    a.mov(BEST_IDX, IDX);
    a.jmp(check);
    a.bind(done);
    a.li(PO, out);
    a.sw(BEST_IDX, PO, 0);
}

fn emit_copy(a: &mut Assembler, src: u32, dst: u32, words: usize) {
    a.li(FOUR, 4);
    a.li(PA, src);
    a.li(PO, dst);
    a.li(END, src + 4 * words as u32);
    let top = a.here();
    a.lw(VA, PA, 0);
    a.sw(VA, PO, 0);
    a.add(PA, PA, FOUR);
    a.add(PO, PO, FOUR);
    a.blt(PA, END, top);
}

/// Emits node `id` reading serialized operands at `operand_bases` and
/// writing its serialized output at `out_base`.
fn emit_node(
    a: &mut Assembler,
    graph: &Graph,
    id: usize,
    operand_bases: &[u32],
    out_base: u32,
) -> Result<(), LowerError> {
    let node = graph.node(id);
    let shape_of = |j: usize| graph.shape(node.inputs[j]);
    let data = |j: usize| operand_bases[j] + data_offset(shape_of(j));
    let out_shape = graph.shape(id);
    let out = out_base + data_offset(out_shape);
    emit_header(a, out_base, out_shape);
    match node.op {
        Op::MatMul => {
            let (sa, sb) = (shape_of(0), shape_of(1));
            emit_matmul(a, data(0), data(1), out, sa[0], sa[1], sb[1]);
        }
        Op::BiasAdd => {
            let total = shape_of(0).iter().product();
            emit_bias_add(a, data(0), data(1), out, total, shape_of(1)[0]);
        }
        Op::Relu => emit_relu(a, data(0), out, shape_of(0).iter().product()),
        Op::ArgMax => emit_argmax(a, data(0), out, shape_of(0).iter().product()),
        op @ (Op::Input | Op::Const) => return Err(LowerError::Unsupported(id, op)),
    }
    Ok(())
}

/// Oracle-value leaf offset of each operand of `id` in its node program.
fn operand_leaf_offsets(graph: &Graph, id: usize) -> Vec<u32> {
    let mut off = 0;
    graph
        .node(id)
        .inputs
        .iter()
        .map(|&i| {
            let here = off;
            off += leaves_for(serialized_len(graph.shape(i)));
            here
        })
        .collect()
}

/// Program computing one compute node. Operand `j`'s preimage key is read
/// from leaf `j` of the input region; its bytes are fetched chunk by chunk
/// into the oracle-value region. The result goes to the output region.
pub fn lower_node(graph: &Graph, id: usize) -> Result<Vec<u32>, LowerError> {
    let node = graph.node(id);
    if node.op.is_data() {
        return Err(LowerError::Unsupported(id, node.op));
    }
    let mut a = Assembler::new();
    let offsets = operand_leaf_offsets(graph, id);
    let mut bases = Vec::with_capacity(offsets.len());
    for (j, (&input, &off)) in node.inputs.iter().zip(&offsets).enumerate() {
        a.li(PA, INPUT_BASE + (LEAF_BYTES * j) as u32);
        a.li(PB, ORACLE_KEY_BASE);
        for w in 0..(LEAF_BYTES / 4) as i32 {
            a.lw(TMP, PA, 4 * w);
            a.sw(TMP, PB, 4 * w);
        }
        a.li(PA, off);
        a.li(PB, 0);
        a.li(PO, leaves_for(serialized_len(graph.shape(input))));
        a.li(FOUR, 1);
        let top = a.here();
        a.preimage(PA, PB);
        a.add(PA, PA, FOUR);
        a.add(PB, PB, FOUR);
        a.blt(PB, PO, top);
        bases.push(ORACLE_VALUE_BASE + off * LEAF_BYTES as u32);
    }
    emit_node(&mut a, graph, id, &bases, OUTPUT_BASE)?;
    a.halt(ZERO);
    Ok(a.finish()?)
}

/// Whole-graph program for single-phase disputes, with its memory images.
#[derive(Clone, Debug)]
pub struct GraphProgram {
    pub program: Vec<u32>,
    /// Serialized input, loaded at the input base.
    pub input_image: Vec<u8>,
    /// Leaf-aligned serialized constants, loaded at the model base.
    pub model_image: Vec<u8>,
    /// Serialized-tensor base address of every node.
    pub node_bases: Vec<u32>,
    /// Word index where each compute node's code starts.
    pub node_code: Vec<Option<usize>>,
}

fn align_leaf(n: usize) -> usize {
    n.div_ceil(LEAF_BYTES) * LEAF_BYTES
}

pub fn lower_graph(graph: &Graph, input: &Tensor) -> Result<GraphProgram, LowerError> {
    let input_image = input.to_bytes();
    let mut model_image = Vec::new();
    let mut heap = HEAP_BASE;
    let mut node_bases = Vec::with_capacity(graph.len());
    for (id, node) in graph.nodes().iter().enumerate() {
        let base = match node.op {
            Op::Input => INPUT_BASE,
            Op::Const => {
                let at = MODEL_BASE + model_image.len() as u32;
                model_image.extend_from_slice(&node.value.as_ref().expect("validated").to_bytes());
                model_image.resize(align_leaf(model_image.len()), 0);
                at
            }
            _ if id == graph.output_id() => OUTPUT_BASE,
            _ => {
                let at = heap;
                heap += align_leaf(serialized_len(graph.shape(id))) as u32;
                at
            }
        };
        node_bases.push(base);
    }
    let mut a = Assembler::new();
    let mut node_code = vec![None; graph.len()];
    for id in graph.compute_nodes() {
        node_code[id] = Some(a.len());
        let operands: Vec<u32> = graph.node(id).inputs.iter().map(|&i| node_bases[i]).collect();
        emit_node(&mut a, graph, id, &operands, node_bases[id])?;
    }
    let out = graph.output_id();
    if graph.node(out).op.is_data() {
        emit_copy(
            &mut a,
            node_bases[out],
            OUTPUT_BASE,
            serialized_len(graph.shape(out)) / 4,
        );
    }
    a.halt(ZERO);
    Ok(GraphProgram {
        program: a.finish()?,
        input_image,
        model_image,
        node_bases,
        node_code,
    })
}
