//! One-step witnesses and the stateless one-step verifier.
//!
//! A witness carries the pre-state CPU fields, the pre-state memory root, a
//! Merkle proof for every leaf the instruction reads, at most one write
//! (old leaf, new leaf, proof) and, for `PREIMAGE`, the fetched chunk with its
//! path to the key. The verifier re-executes the instruction against those
//! leaves only, so a valid witness is the whole evidence a referee needs.

use super::machine::{execute, state_root_from, Bus, BusFault, CpuState, VmError, VmState, NUM_REGS};
use super::oracle::{verify_chunk, PreimageOracle};
use crate::hash::{self, Digest};
use crate::merkle::{self, fold_path, hash_leaf, Leaf, MemTree, MerkleProof, LEAF_BYTES};

const MAGIC: &[u8; 4] = b"OPWT";
const VERSION: u8 = 1;

/// Upper bound on leaf proofs per step (fetch, LI immediate / load, key, write).
pub const MAX_LEAF_PROOFS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafRead {
    pub leaf: Leaf,
    pub proof: MerkleProof,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LeafWrite {
    pub old: Leaf,
    pub new: Leaf,
    pub proof: MerkleProof,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PreimageChunk {
    pub key: Digest,
    pub index: u32,
    pub bytes: Leaf,
    pub siblings: Vec<Digest>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepWitness {
    pub pre: CpuState,
    pub memory_root: Digest,
    pub reads: Vec<LeafRead>,
    pub write: Option<LeafWrite>,
    pub preimage: Option<PreimageChunk>,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum RejectReason {
    #[error("witness pre-state does not match the agreed state root")]
    PreStateMismatch,
    #[error("witness carries {0} leaf proofs, more than allowed")]
    TooManyProofs(usize),
    #[error("read proof {0} does not verify against the memory root")]
    BadReadProof(usize),
    #[error("write proof does not verify against the memory root")]
    BadWriteProof,
    #[error("instruction touched leaf {0} which the witness does not cover")]
    MissingLeaf(u32),
    #[error("instruction wrote leaf {0} but the witness declares a different write")]
    UnexpectedWrite(u32),
    #[error("declared new leaf differs from the executed result")]
    WriteMismatch,
    #[error("witness declares a write the instruction did not perform")]
    UnusedWrite,
    #[error("instruction needs a preimage chunk the witness does not carry")]
    MissingPreimageChunk,
    #[error("preimage chunk does not verify against its key")]
    BadPreimageProof,
    #[error("witness declares a preimage chunk the instruction did not use")]
    UnusedPreimageChunk,
    #[error("post-state mismatch: executed root is {computed}")]
    PostStateMismatch { computed: Digest },
}

impl RejectReason {
    /// True when the witness itself is invalid, as opposed to a well-formed
    /// witness whose execution contradicts the claimed post-state.
    pub fn is_malformed(&self) -> bool {
        !matches!(self, RejectReason::PostStateMismatch { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self, Verdict::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WitnessDecodeError {
    #[error("bad magic")]
    Magic,
    #[error("unsupported witness version {0}")]
    Version(u8),
    #[error("witness uses hash id {found}, active hash is {active}")]
    HashMismatch { found: u8, active: u8 },
    #[error("truncated witness")]
    Truncated,
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error("trailing bytes after witness")]
    Trailing,
}

struct Recorder<'a> {
    tree: &'a MemTree,
    oracle: &'a PreimageOracle,
    reads: Vec<LeafRead>,
    write: Option<(u32, LeafWrite)>,
    preimage: Option<PreimageChunk>,
}

impl Bus for Recorder<'_> {
    fn read_leaf(&mut self, index: u32) -> Result<Leaf, BusFault> {
        if let Some((i, w)) = &self.write {
            if *i == index {
                return Ok(w.new);
            }
        }
        if let Some(r) = self.reads.iter().find(|r| r.proof.leaf_index == index) {
            return Ok(r.leaf);
        }
        let leaf = self.tree.leaf(index);
        let proof = self.tree.prove(index, 0).expect("leaf index in range");
        self.reads.push(LeafRead { leaf, proof });
        Ok(leaf)
    }

    fn modify_leaf(&mut self, index: u32, f: &mut dyn FnMut(&mut Leaf)) -> Result<(), BusFault> {
        let old = self.tree.leaf(index);
        let mut new = old;
        f(&mut new);
        let proof = self.tree.prove(index, 0).expect("leaf index in range");
        self.write = Some((index, LeafWrite { old, new, proof }));
        Ok(())
    }

    fn preimage_chunk(&mut self, key: &Digest, chunk: u32) -> Result<Leaf, BusFault> {
        let bytes = self.oracle.chunk(key, chunk).ok_or(BusFault::MissingPreimage(*key))?;
        let siblings = self
            .oracle
            .chunk_proof(key, chunk)
            .ok_or(BusFault::MissingPreimage(*key))?;
        self.preimage = Some(PreimageChunk {
            key: *key,
            index: chunk,
            bytes,
            siblings,
        });
        Ok(bytes)
    }
}

impl VmState {
    /// Witness for the transition from `self` to its successor.
    pub fn gen_step_witness(&self, oracle: &PreimageOracle) -> Result<StepWitness, VmError> {
        let mut rec = Recorder {
            tree: &self.memory,
            oracle,
            reads: Vec::new(),
            write: None,
            preimage: None,
        };
        let mut cpu = self.cpu.clone();
        match execute(&mut cpu, &mut rec) {
            Ok(()) => {}
            Err(BusFault::MissingPreimage(k)) => return Err(VmError::MissingPreimage(k)),
            Err(BusFault::Reject(_)) => unreachable!("recorder never rejects"),
        }
        Ok(StepWitness {
            pre: self.cpu.clone(),
            memory_root: self.memory.root(),
            reads: rec.reads,
            write: rec.write.map(|(_, w)| w),
            preimage: rec.preimage,
        })
    }
}

struct Replayer<'a> {
    w: &'a StepWitness,
    check_preimage: bool,
    written: Option<Leaf>,
    new_root: Option<Digest>,
    used_preimage: bool,
}

impl Bus for Replayer<'_> {
    fn read_leaf(&mut self, index: u32) -> Result<Leaf, BusFault> {
        if let Some(w) = &self.w.write {
            if w.proof.leaf_index == index {
                return Ok(self.written.unwrap_or(w.old));
            }
        }
        self.w
            .reads
            .iter()
            .find(|r| r.proof.leaf_index == index)
            .map(|r| r.leaf)
            .ok_or(BusFault::Reject(RejectReason::MissingLeaf(index)))
    }

    fn modify_leaf(&mut self, index: u32, f: &mut dyn FnMut(&mut Leaf)) -> Result<(), BusFault> {
        let w = match &self.w.write {
            Some(w) if w.proof.leaf_index == index && self.written.is_none() => w,
            _ => return Err(BusFault::Reject(RejectReason::UnexpectedWrite(index))),
        };
        let mut new = w.old;
        f(&mut new);
        if new != w.new {
            return Err(BusFault::Reject(RejectReason::WriteMismatch));
        }
        self.written = Some(new);
        self.new_root = Some(fold_path(hash_leaf(&new), index as u64, &w.proof.siblings));
        Ok(())
    }

    fn preimage_chunk(&mut self, key: &Digest, chunk: u32) -> Result<Leaf, BusFault> {
        let p = match &self.w.preimage {
            Some(p) if p.key == *key && p.index == chunk => p,
            _ => return Err(BusFault::Reject(RejectReason::MissingPreimageChunk)),
        };
        if self.check_preimage && !verify_chunk(key, chunk, &p.bytes, &p.siblings) {
            return Err(BusFault::Reject(RejectReason::BadPreimageProof));
        }
        self.used_preimage = true;
        Ok(p.bytes)
    }
}

impl StepWitness {
    pub fn pre_state_root(&self) -> Digest {
        state_root_from(&self.pre, &self.memory_root)
    }

    pub fn proof_count(&self) -> usize {
        self.reads.len() + self.write.is_some() as usize
    }

    /// Post-state root implied by executing the witnessed step.
    pub fn replay(&self, pre_root: &Digest, check_preimage: bool) -> Result<Digest, RejectReason> {
        if self.pre_state_root() != *pre_root {
            return Err(RejectReason::PreStateMismatch);
        }
        if self.proof_count() > MAX_LEAF_PROOFS {
            return Err(RejectReason::TooManyProofs(self.proof_count()));
        }
        for (i, r) in self.reads.iter().enumerate() {
            if r.proof.subtree_level != 0 || !merkle::verify(&self.memory_root, &hash_leaf(&r.leaf), &r.proof) {
                return Err(RejectReason::BadReadProof(i));
            }
        }
        if let Some(w) = &self.write {
            if w.proof.subtree_level != 0 || !merkle::verify(&self.memory_root, &hash_leaf(&w.old), &w.proof) {
                return Err(RejectReason::BadWriteProof);
            }
        }
        if self.pre.exited {
            return Ok(*pre_root);
        }
        let mut bus = Replayer {
            w: self,
            check_preimage,
            written: None,
            new_root: None,
            used_preimage: false,
        };
        let mut cpu = self.pre.clone();
        match execute(&mut cpu, &mut bus) {
            Ok(()) => {}
            Err(BusFault::Reject(r)) => return Err(r),
            Err(BusFault::MissingPreimage(_)) => return Err(RejectReason::MissingPreimageChunk),
        }
        if self.write.is_some() && bus.written.is_none() {
            return Err(RejectReason::UnusedWrite);
        }
        if self.preimage.is_some() && !bus.used_preimage {
            return Err(RejectReason::UnusedPreimageChunk);
        }
        let mem = bus.new_root.unwrap_or(self.memory_root);
        Ok(state_root_from(&cpu, &mem))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1024);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(hash::active().id());
        out.extend_from_slice(&self.pre.pc.to_le_bytes());
        for r in self.pre.regs {
            out.extend_from_slice(&r.to_le_bytes());
        }
        out.push(self.pre.exited as u8);
        out.push(self.pre.exit_code);
        out.extend_from_slice(self.memory_root.as_bytes());
        out.push(self.reads.len() as u8);
        for r in &self.reads {
            out.extend_from_slice(&r.leaf);
            r.proof.encode_into(&mut out);
        }
        out.push(self.write.is_some() as u8);
        if let Some(w) = &self.write {
            out.extend_from_slice(&w.old);
            out.extend_from_slice(&w.new);
            w.proof.encode_into(&mut out);
        }
        out.push(self.preimage.is_some() as u8);
        if let Some(p) = &self.preimage {
            out.extend_from_slice(p.key.as_bytes());
            out.extend_from_slice(&p.index.to_le_bytes());
            out.extend_from_slice(&p.bytes);
            out.push(p.siblings.len() as u8);
            for s in &p.siblings {
                out.extend_from_slice(s.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WitnessDecodeError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(WitnessDecodeError::Magic);
        }
        let version = r.u8()?;
        if version != VERSION {
            return Err(WitnessDecodeError::Version(version));
        }
        let found = r.u8()?;
        let active = hash::active().id();
        if found != active {
            return Err(WitnessDecodeError::HashMismatch { found, active });
        }
        let pc = r.u32()?;
        let mut regs = [0u32; NUM_REGS];
        for reg in regs.iter_mut() {
            *reg = r.u32()?;
        }
        let exited = r.flag("exited")?;
        let exit_code = r.u8()?;
        let memory_root = r.digest()?;
        let n_reads = r.u8()? as usize;
        let mut reads = Vec::with_capacity(n_reads);
        for _ in 0..n_reads {
            let leaf = r.leaf()?;
            let proof = r.proof()?;
            reads.push(LeafRead { leaf, proof });
        }
        let write = if r.flag("write flag")? {
            let old = r.leaf()?;
            let new = r.leaf()?;
            let proof = r.proof()?;
            Some(LeafWrite { old, new, proof })
        } else {
            None
        };
        let preimage = if r.flag("preimage flag")? {
            let key = r.digest()?;
            let index = r.u32()?;
            let bytes = r.leaf()?;
            let n = r.u8()? as usize;
            let siblings = (0..n).map(|_| r.digest()).collect::<Result<_, _>>()?;
            Some(PreimageChunk {
                key,
                index,
                bytes,
                siblings,
            })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(WitnessDecodeError::Trailing);
        }
        Ok(StepWitness {
            pre: CpuState {
                pc,
                regs,
                exited,
                exit_code,
            },
            memory_root,
            reads,
            write,
            preimage,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WitnessDecodeError> {
        let end = self.pos.checked_add(n).ok_or(WitnessDecodeError::Truncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(WitnessDecodeError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WitnessDecodeError> {
        Ok(self.take(1)?[0])
    }

    fn flag(&mut self, what: &'static str) -> Result<bool, WitnessDecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WitnessDecodeError::Invalid(what)),
        }
    }

    fn u32(&mut self) -> Result<u32, WitnessDecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn leaf(&mut self) -> Result<Leaf, WitnessDecodeError> {
        Ok(self.take(LEAF_BYTES)?.try_into().unwrap())
    }

    fn digest(&mut self) -> Result<Digest, WitnessDecodeError> {
        Ok(Digest(self.leaf()?))
    }

    fn proof(&mut self) -> Result<MerkleProof, WitnessDecodeError> {
        let (p, used) =
            MerkleProof::decode_prefix(&self.bytes[self.pos..]).map_err(|_| WitnessDecodeError::Truncated)?;
        self.pos += used;
        Ok(p)
    }
}

/// Accepts iff the witness is well formed for `pre_root` and executing the
/// step yields `claimed_post`.
pub fn verify_step(pre_root: &Digest, claimed_post: &Digest, witness: &StepWitness, check_preimage: bool) -> Verdict {
    match witness.replay(pre_root, check_preimage) {
        Ok(computed) if computed == *claimed_post => Verdict::Accept,
        Ok(computed) => Verdict::Reject(RejectReason::PostStateMismatch { computed }),
        Err(r) => Verdict::Reject(r),
    }
}
