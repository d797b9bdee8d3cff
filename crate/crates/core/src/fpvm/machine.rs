//! VM state, the single-instruction transition function and trace helpers.
//!
//! Instruction semantics live in [`execute`], which is generic over a [`Bus`].
//! The live VM drives it with the full memory tree; the one-step verifier
//! drives it with a bus that only knows the witnessed leaves. Both paths
//! therefore share one definition of every opcode.

use super::isa::{mulfx, Instruction, Opcode};
use super::layout::{
    INPUT_BASE, MAX_PREIMAGE_CHUNKS, MODEL_BASE, ORACLE_KEY_BASE, ORACLE_VALUE_BASE, ORACLE_VALUE_LEAVES, OUTPUT_BASE,
    PROGRAM_BASE,
};
use super::oracle::PreimageOracle;
use super::witness::RejectReason;
use crate::hash::{hash_parts, Digest};
use crate::merkle::{Leaf, MemTree, MerkleError, LEAF_BYTES};

pub const NUM_REGS: usize = 16;

pub const TRAP_BAD_OPCODE: u8 = 0xF1;
pub const TRAP_MISALIGNED_PC: u8 = 0xF2;
pub const TRAP_MISALIGNED_MEM: u8 = 0xF3;
pub const TRAP_PREIMAGE_RANGE: u8 = 0xF4;

const STATE_TAG: &[u8] = b"opml/vm-state/v1";

/// Register file and control flags: everything in the state except memory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CpuState {
    pub pc: u32,
    pub regs: [u32; NUM_REGS],
    pub exited: bool,
    pub exit_code: u8,
}

impl CpuState {
    pub fn reg(&self, r: u8) -> u32 {
        if r == 0 {
            0
        } else {
            self.regs[r as usize & 0xF]
        }
    }

    fn set(&mut self, r: u8, v: u32) {
        if r != 0 {
            self.regs[r as usize & 0xF] = v;
        }
    }

    fn trap(&mut self, code: u8) {
        self.exited = true;
        self.exit_code = code;
    }
}

/// Commitment to a full VM state given its memory root.
pub fn state_root_from(cpu: &CpuState, memory_root: &Digest) -> Digest {
    let mut fields = Vec::with_capacity(4 + 4 * NUM_REGS + 2);
    fields.extend_from_slice(&cpu.pc.to_le_bytes());
    for r in cpu.regs {
        fields.extend_from_slice(&r.to_le_bytes());
    }
    fields.push(cpu.exited as u8);
    fields.push(cpu.exit_code);
    hash_parts(&[STATE_TAG, &fields, memory_root.as_bytes()])
}

pub(crate) enum BusFault {
    MissingPreimage(Digest),
    Reject(RejectReason),
}

/// Leaf-granular memory plus preimage access.
pub(crate) trait Bus {
    fn read_leaf(&mut self, index: u32) -> Result<Leaf, BusFault>;
    fn modify_leaf(&mut self, index: u32, f: &mut dyn FnMut(&mut Leaf)) -> Result<(), BusFault>;
    fn preimage_chunk(&mut self, key: &Digest, chunk: u32) -> Result<Leaf, BusFault>;
}

fn read_word(bus: &mut dyn Bus, addr: u32) -> Result<u32, BusFault> {
    let leaf = bus.read_leaf(addr / LEAF_BYTES as u32)?;
    let off = (addr as usize) % LEAF_BYTES;
    Ok(u32::from_le_bytes(leaf[off..off + 4].try_into().unwrap()))
}

fn write_word(bus: &mut dyn Bus, addr: u32, value: u32) -> Result<(), BusFault> {
    let off = (addr as usize) % LEAF_BYTES;
    bus.modify_leaf(addr / LEAF_BYTES as u32, &mut |leaf| {
        leaf[off..off + 4].copy_from_slice(&value.to_le_bytes())
    })
}

/// Applies one instruction. On `Err` the CPU state is left untouched.
pub(crate) fn execute(cpu: &mut CpuState, bus: &mut dyn Bus) -> Result<(), BusFault> {
    if cpu.exited {
        return Ok(());
    }
    let mut next = cpu.clone();
    let pc = cpu.pc;
    if !pc.is_multiple_of(4) {
        next.trap(TRAP_MISALIGNED_PC);
        *cpu = next;
        return Ok(());
    }
    let ins = match Instruction::decode(read_word(bus, pc)?) {
        Ok(ins) => ins,
        Err(_) => {
            next.trap(TRAP_BAD_OPCODE);
            *cpu = next;
            return Ok(());
        }
    };
    let rs = cpu.reg(ins.rs);
    let rt = cpu.reg(ins.rt);
    let imm = ins.imm as i32 as u32;
    let branch_target = pc.wrapping_add(4).wrapping_add(imm.wrapping_mul(4));
    next.pc = pc.wrapping_add(4);
    match ins.opcode {
        Opcode::Li => {
            let value = read_word(bus, pc.wrapping_add(4))?;
            next.set(ins.rd, value);
            next.pc = pc.wrapping_add(8);
        }
        Opcode::Lw => {
            let addr = rs.wrapping_add(imm);
            if !addr.is_multiple_of(4) {
                next.trap(TRAP_MISALIGNED_MEM);
                next.pc = pc;
            } else {
                let v = read_word(bus, addr)?;
                next.set(ins.rd, v);
            }
        }
        Opcode::Sw => {
            let addr = rs.wrapping_add(imm);
            if !addr.is_multiple_of(4) {
                next.trap(TRAP_MISALIGNED_MEM);
                next.pc = pc;
            } else {
                write_word(bus, addr, rt)?;
            }
        }
        Opcode::Add => next.set(ins.rd, rs.wrapping_add(rt)),
        Opcode::Sub => next.set(ins.rd, rs.wrapping_sub(rt)),
        Opcode::Mul => next.set(ins.rd, rs.wrapping_mul(rt)),
        Opcode::MulFx => next.set(ins.rd, mulfx(rs, rt)),
        Opcode::Sra => next.set(ins.rd, ((rs as i32) >> (ins.imm as u32 & 31)) as u32),
        Opcode::And => next.set(ins.rd, rs & rt),
        Opcode::Beq => {
            if rs == rt {
                next.pc = branch_target;
            }
        }
        Opcode::Blt => {
            if (rs as i32) < (rt as i32) {
                next.pc = branch_target;
            }
        }
        Opcode::Jmp => next.pc = branch_target,
        Opcode::Preimage => {
            let dest = cpu.reg(ins.rd);
            let chunk = rs;
            if chunk >= MAX_PREIMAGE_CHUNKS || dest >= ORACLE_VALUE_LEAVES {
                next.trap(TRAP_PREIMAGE_RANGE);
                next.pc = pc;
            } else {
                let key = Digest(bus.read_leaf(ORACLE_KEY_BASE / LEAF_BYTES as u32)?);
                let data = bus.preimage_chunk(&key, chunk)?;
                bus.modify_leaf(ORACLE_VALUE_BASE / LEAF_BYTES as u32 + dest, &mut |leaf| *leaf = data)?;
            }
        }
        Opcode::Halt => {
            next.exited = true;
            next.exit_code = rs as u8;
            next.pc = pc;
        }
    }
    *cpu = next;
    Ok(())
}

struct TreeBus<'a> {
    tree: &'a mut MemTree,
    oracle: &'a PreimageOracle,
}

impl Bus for TreeBus<'_> {
    fn read_leaf(&mut self, index: u32) -> Result<Leaf, BusFault> {
        Ok(self.tree.leaf(index))
    }

    fn modify_leaf(&mut self, index: u32, f: &mut dyn FnMut(&mut Leaf)) -> Result<(), BusFault> {
        let mut leaf = self.tree.leaf(index);
        f(&mut leaf);
        self.tree
            .update_leaf(index, leaf)
            .expect("word addresses always map inside the tree");
        Ok(())
    }

    fn preimage_chunk(&mut self, key: &Digest, chunk: u32) -> Result<Leaf, BusFault> {
        self.oracle.chunk(key, chunk).ok_or(BusFault::MissingPreimage(*key))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VmError {
    #[error("no preimage for key {0}")]
    MissingPreimage(Digest),
    #[error("step budget exhausted after {steps} steps without HALT")]
    BudgetExceeded { steps: u64, state: Box<VmState> },
    #[error("max_steps must be positive")]
    InvalidBudget,
    #[error(transparent)]
    Memory(#[from] MerkleError),
}

/// Complete machine state: the unit of dispute.
#[derive(Clone, Debug, Default)]
pub struct VmState {
    pub cpu: CpuState,
    pub memory: MemTree,
    pub step_count: u64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub state: VmState,
    /// Number of steps executed, HALT included.
    pub steps: u64,
}

impl VmState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Program words at the program base, raw input and model bytes in their
    /// regions. Registers start at zero and `pc` at the program base.
    pub fn load_program(program: &[u32], input: &[u8], model: &[u8]) -> Result<Self, MerkleError> {
        let mut s = VmState::new();
        let code: Vec<u8> = program.iter().flat_map(|w| w.to_le_bytes()).collect();
        s.memory.write_bytes(PROGRAM_BASE, &code)?;
        s.memory.write_bytes(INPUT_BASE, input)?;
        s.memory.write_bytes(MODEL_BASE, model)?;
        s.cpu.pc = PROGRAM_BASE;
        Ok(s)
    }

    pub fn pc(&self) -> u32 {
        self.cpu.pc
    }

    pub fn exited(&self) -> bool {
        self.cpu.exited
    }

    pub fn exit_code(&self) -> u8 {
        self.cpu.exit_code
    }

    pub fn reg(&self, r: u8) -> u32 {
        self.cpu.reg(r)
    }

    pub fn set_reg(&mut self, r: u8, v: u32) {
        self.cpu.set(r, v);
    }

    pub fn state_root(&self) -> Digest {
        state_root_from(&self.cpu, &self.memory.root())
    }

    /// Executes one instruction. A halted machine is left unchanged.
    pub fn step(&mut self, oracle: &PreimageOracle) -> Result<(), VmError> {
        if self.cpu.exited {
            return Ok(());
        }
        let mut bus = TreeBus {
            tree: &mut self.memory,
            oracle,
        };
        match execute(&mut self.cpu, &mut bus) {
            Ok(()) => {
                self.step_count += 1;
                Ok(())
            }
            Err(BusFault::MissingPreimage(k)) => Err(VmError::MissingPreimage(k)),
            Err(BusFault::Reject(_)) => unreachable!("tree bus never rejects"),
        }
    }

    /// Runs until HALT (or a trap) or until `max_steps` steps were executed.
    pub fn run(mut self, oracle: &PreimageOracle, max_steps: u64) -> Result<RunOutcome, VmError> {
        if max_steps == 0 {
            return Err(VmError::InvalidBudget);
        }
        let start = self.step_count;
        while !self.cpu.exited {
            if self.step_count - start >= max_steps {
                let steps = self.step_count - start;
                return Err(VmError::BudgetExceeded {
                    steps,
                    state: Box::new(self),
                });
            }
            self.step(oracle)?;
        }
        let steps = self.step_count - start;
        Ok(RunOutcome { state: self, steps })
    }

    /// State after exactly `k` steps from `self`, clamped at HALT.
    pub fn snapshot_at(&self, oracle: &PreimageOracle, k: u64) -> Result<VmState, VmError> {
        let mut s = self.clone();
        for _ in 0..k {
            if s.cpu.exited {
                break;
            }
            s.step(oracle)?;
        }
        Ok(s)
    }

    /// State roots `S_0 ..= S_n` of the run from `self`.
    pub fn trace_roots(&self, oracle: &PreimageOracle, max_steps: u64) -> Result<Vec<Digest>, VmError> {
        let mut s = self.clone();
        let mut roots = vec![s.state_root()];
        while !s.cpu.exited {
            if roots.len() as u64 > max_steps {
                let steps = roots.len() as u64 - 1;
                return Err(VmError::BudgetExceeded {
                    steps,
                    state: Box::new(s),
                });
            }
            s.step(oracle)?;
            roots.push(s.state_root());
        }
        Ok(roots)
    }

    pub fn read_bytes(&self, addr: u32, len: usize) -> Vec<u8> {
        self.memory.read_bytes(addr, len)
    }

    pub fn read_word(&self, addr: u32) -> u32 {
        u32::from_le_bytes(self.memory.read_bytes(addr, 4).try_into().unwrap())
    }

    /// First `len` bytes of the output region.
    pub fn output_bytes(&self, len: usize) -> Vec<u8> {
        self.read_bytes(OUTPUT_BASE, len)
    }
}
