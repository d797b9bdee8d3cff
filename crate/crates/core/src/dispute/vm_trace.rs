//! VM execution traces, optionally with an injected persistent fault.

use rand::Rng;

use super::actor::Trace;
use crate::fpvm::asm::Assembler;
use crate::fpvm::layout::HEAP_BASE;
use crate::fpvm::{PreimageOracle, StepWitness, VmError, VmState};
use crate::hash::Digest;
use crate::merkle::LEAF_BYTES;
use crate::rng;

/// Last heap leaf; never touched by generated programs.
pub const FAULT_MARKER_ADDR: u32 = 0xFFFF_FFE0;

/// Flips one bit of the fault-marker leaf. Once flipped the state can never
/// re-converge with the honest trace, because no instruction reads or
/// writes the marker.
pub fn flip_fault_marker(vm: &mut VmState) {
    let idx = FAULT_MARKER_ADDR / LEAF_BYTES as u32;
    let mut leaf = vm.memory.leaf(idx);
    leaf[0] ^= 1;
    vm.memory.update_leaf(idx, leaf).expect("marker index in range");
}

/// Straight-line program that halts after exactly `steps` steps (at least
/// one), mixing ALU ops with heap stores so memory changes along the trace.
pub fn synthetic_vm(steps: u64, seed: u64) -> VmState {
    let mut r = rng::stream(seed, "synthetic");
    let mut a = Assembler::new();
    let body = steps.max(1) - 1;
    for i in 0..body {
        let rd = r.gen_range(1..15u8);
        let (rs, rt) = (r.gen_range(1..15u8), r.gen_range(1..15u8));
        match if i == 0 { 0 } else { r.gen_range(0..5) } {
            0 => a.li(15, HEAP_BASE + 4 * r.gen_range(0..4096u32)),
            1 => a.add(rd, rs, rt),
            2 => a.mul(rd, rs, rt),
            3 => a.li(rd, r.gen()),
            _ => a.sw(rs, 15, 4 * r.gen_range(0..64i32)),
        }
    }
    a.halt(0);
    VmState::load_program(&a.finish().expect("no labels"), &[], &[]).expect("program fits")
}

#[derive(Clone, Debug)]
pub struct VmTrace {
    initial: VmState,
    oracle: PreimageOracle,
    fault: Option<u64>,
    roots: Vec<Digest>,
    last: VmState,
}

impl VmTrace {
    /// Runs `initial` to completion. With `fault = Some(s)` the marker is
    /// flipped right after step `s` executes, so `S_t` is corrupted for all
    /// `t >= s`.
    pub fn new(initial: VmState, oracle: PreimageOracle, fault: Option<u64>, max_steps: u64) -> Result<Self, VmError> {
        let mut s = initial.clone();
        let mut roots = vec![s.state_root()];
        while !s.exited() {
            if roots.len() as u64 > max_steps {
                return Err(VmError::BudgetExceeded {
                    steps: roots.len() as u64 - 1,
                    state: Box::new(s),
                });
            }
            Self::advance(&mut s, &oracle, fault)?;
            roots.push(s.state_root());
        }
        Ok(VmTrace {
            initial,
            oracle,
            fault,
            roots,
            last: s,
        })
    }

    fn advance(s: &mut VmState, oracle: &PreimageOracle, fault: Option<u64>) -> Result<(), VmError> {
        let before = s.step_count;
        s.step(oracle)?;
        if s.step_count != before && Some(s.step_count) == fault {
            flip_fault_marker(s);
        }
        Ok(())
    }

    pub fn initial(&self) -> &VmState {
        &self.initial
    }

    pub fn oracle(&self) -> &PreimageOracle {
        &self.oracle
    }

    pub fn fault(&self) -> Option<u64> {
        self.fault
    }

    pub fn roots(&self) -> &[Digest] {
        &self.roots
    }

    pub fn final_state(&self) -> &VmState {
        &self.last
    }

    /// State after `i` steps (clamped at halt).
    pub fn state_at(&self, i: u64) -> VmState {
        let mut s = self.initial.clone();
        for _ in 0..i.min(self.len()) {
            Self::advance(&mut s, &self.oracle, self.fault).expect("replay of a completed trace");
        }
        s
    }
}

impl Trace for VmTrace {
    fn len(&self) -> u64 {
        self.roots.len() as u64 - 1
    }

    fn root_at(&self, i: u64) -> Digest {
        self.roots[(i as usize).min(self.roots.len() - 1)]
    }

    fn witnesses(&self, i: u64, count: u64) -> Option<Vec<StepWitness>> {
        let mut s = self.state_at(i);
        let mut out = Vec::with_capacity(count as usize);
        for _ in 0..count {
            out.push(s.gen_step_witness(&self.oracle).ok()?);
            Self::advance(&mut s, &self.oracle, self.fault).ok()?;
        }
        Some(out)
    }
}
