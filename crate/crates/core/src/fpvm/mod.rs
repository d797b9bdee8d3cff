//! MiniVM: a 32-bit register machine whose whole state is committed by a
//! Merkle root, plus one-step witnesses for on-chain style arbitration.

pub mod asm;
pub mod isa;
pub mod layout;
mod machine;
pub mod oracle;
pub mod witness;

pub use machine::{
    state_root_from, CpuState, RunOutcome, VmError, VmState, NUM_REGS, TRAP_BAD_OPCODE, TRAP_MISALIGNED_MEM,
    TRAP_MISALIGNED_PC, TRAP_PREIMAGE_RANGE,
};
pub use oracle::PreimageOracle;
pub use witness::{verify_step, RejectReason, StepWitness, Verdict};
