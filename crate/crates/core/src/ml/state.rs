//! Phase-1 graph state: node outputs laid out in a sparse Merkle tree, one
//! 128 KiB field per node, so per-node fields can be proven against the
//! commitment.

use super::tensor::Tensor;
use crate::hash::Digest;
use crate::merkle::{MemTree, MerkleError, MerkleProof};

pub const OUT_FIELD_LEVEL: u8 = 12;

/// Byte address of node `id`'s output field.
pub fn out_field_base(id: usize) -> u32 {
    (id as u32) << (OUT_FIELD_LEVEL as u32 + 5)
}

#[derive(Clone, Debug, Default)]
pub struct GraphState {
    tree: MemTree,
    computed: usize,
}

impl GraphState {
    pub fn new() -> Self {
        Self::default()
    }

    /// State after the first `outputs.len()` nodes.
    pub fn from_outputs(outputs: &[Tensor]) -> Self {
        let mut s = GraphState::new();
        for t in outputs {
            s.push(t);
        }
        s
    }

    /// Records the next node's output.
    pub fn push(&mut self, out: &Tensor) {
        self.tree
            .write_bytes(out_field_base(self.computed), &out.to_bytes())
            .expect("graph validation bounds node count and tensor size");
        self.computed += 1;
    }

    pub fn computed(&self) -> usize {
        self.computed
    }

    pub fn commitment(&self) -> Digest {
        self.tree.root()
    }

    pub fn field_root(&self, id: usize) -> Digest {
        self.tree
            .subtree_root(out_field_base(id), OUT_FIELD_LEVEL)
            .expect("aligned field")
    }

    pub fn prove_field(&self, id: usize) -> Result<MerkleProof, MerkleError> {
        self.tree.prove_region(out_field_base(id), OUT_FIELD_LEVEL)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpvm::oracle::preimage_key;
    use crate::merkle::{verify, zero_hashes};

    #[test]
    fn field_root_is_preimage_key() {
        let t = Tensor::new(vec![2], vec![3, -4]).unwrap();
        let s = GraphState::from_outputs(std::slice::from_ref(&t));
        assert_eq!(s.field_root(0), preimage_key(&t.to_bytes()).unwrap());
        assert_eq!(s.field_root(1), zero_hashes()[OUT_FIELD_LEVEL as usize]);
        let p = s.prove_field(0).unwrap();
        assert!(verify(&s.commitment(), &s.field_root(0), &p));
    }

    #[test]
    fn any_byte_change_moves_commitment() {
        let t = Tensor::new(vec![1, 3], vec![1, 2, 3]).unwrap();
        let base = GraphState::from_outputs(&[t.clone(), t.clone()]).commitment();
        for i in 0..3 {
            for bit in [0, 7, 31] {
                let mut u = t.clone();
                u.data_mut()[i] ^= 1 << bit;
                assert_ne!(GraphState::from_outputs(&[t.clone(), u]).commitment(), base);
            }
        }
    }
}
