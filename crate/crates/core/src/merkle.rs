//! Fixed-depth sparse binary Merkle tree over the 32-bit address space.
//!
//! 2^27 leaves of 32 bytes each cover every byte address. Leaves are hashed as
//! `H(0x00 || leaf)`, internal nodes as `H(left || right)`; the differing input
//! lengths keep a leaf from ever being mistaken for an internal node. Absent
//! leaves are all-zero and never stored, and subtrees that hash to the
//! corresponding zero digest are pruned, so two trees with equal content have
//! equal storage and equal roots.

use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use crate::hash::{self, hash_parts, Digest, HashKind};

pub const TREE_DEPTH: u8 = 27;
pub const LEAF_BYTES: usize = 32;
pub const LEAF_COUNT: u32 = 1 << TREE_DEPTH;

const LEAF_PREFIX: [u8; 1] = [0x00];

pub type Leaf = [u8; LEAF_BYTES];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MerkleError {
    #[error("leaf index {0} outside the tree (max {max})", max = LEAF_COUNT - 1)]
    IndexOutOfRange(u64),
    #[error("index {index} is not aligned to subtree level {level}")]
    Misaligned { index: u64, level: u8 },
    #[error("subtree level {0} exceeds tree depth")]
    LevelTooLarge(u8),
    #[error("region [{base:#x}, +{len}) does not fit in a level-{level} field")]
    RegionTooLarge { base: u64, len: usize, level: u8 },
    #[error("fields overlap at level {level} index {index}")]
    OverlappingFields { level: u8, index: u64 },
    #[error("malformed proof encoding: {0}")]
    Format(&'static str),
}

pub fn hash_leaf(leaf: &Leaf) -> Digest {
    hash_parts(&[&LEAF_PREFIX, leaf])
}

pub fn hash_node(left: &Digest, right: &Digest) -> Digest {
    hash_parts(&[left.as_bytes(), right.as_bytes()])
}

/// `zero_hashes()[l]` is the root of an all-zero subtree of height `l`.
pub fn zero_hashes() -> &'static [Digest; TREE_DEPTH as usize + 1] {
    static SHA: OnceLock<[Digest; TREE_DEPTH as usize + 1]> = OnceLock::new();
    static KECCAK: OnceLock<[Digest; TREE_DEPTH as usize + 1]> = OnceLock::new();
    let cell = match hash::active() {
        HashKind::Sha256 => &SHA,
        HashKind::Keccak256 => &KECCAK,
    };
    cell.get_or_init(|| {
        let mut z = [Digest::ZERO; TREE_DEPTH as usize + 1];
        z[0] = hash_leaf(&[0u8; LEAF_BYTES]);
        for l in 1..z.len() {
            z[l] = hash_node(&z[l - 1], &z[l - 1]);
        }
        z
    })
}

/// Fold a node digest up a path of siblings. `index` is the node's position at
/// the level where the path starts.
pub fn fold_path(node: Digest, index: u64, siblings: &[Digest]) -> Digest {
    let mut acc = node;
    let mut idx = index;
    for sib in siblings {
        acc = if idx & 1 == 0 {
            hash_node(&acc, sib)
        } else {
            hash_node(sib, &acc)
        };
        idx >>= 1;
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleProof {
    /// Leaf index of the first leaf covered by the proven subtree.
    pub leaf_index: u32,
    /// Height of the proven subtree; 0 proves a single leaf.
    pub subtree_level: u8,
    /// Sibling digests from the subtree's level up to just below the root.
    pub siblings: Vec<Digest>,
}

impl MerkleProof {
    pub fn encoded_len(&self) -> usize {
        6 + 32 * self.siblings.len()
    }

    /// Little-endian u32 index, u8 level, u8 sibling count, then siblings.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.leaf_index.to_le_bytes());
        out.push(self.subtree_level);
        out.push(self.siblings.len() as u8);
        for s in &self.siblings {
            out.extend_from_slice(s.as_bytes());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes one proof from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn decode_prefix(bytes: &[u8]) -> Result<(Self, usize), MerkleError> {
        if bytes.len() < 6 {
            return Err(MerkleError::Format("truncated proof header"));
        }
        let leaf_index = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
        let subtree_level = bytes[4];
        let count = bytes[5] as usize;
        let end = 6 + 32 * count;
        if bytes.len() < end {
            return Err(MerkleError::Format("truncated sibling list"));
        }
        let siblings = bytes[6..end]
            .chunks_exact(32)
            .map(|c| Digest::from_slice(c).unwrap())
            .collect();
        Ok((
            MerkleProof {
                leaf_index,
                subtree_level,
                siblings,
            },
            end,
        ))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, MerkleError> {
        let (proof, used) = Self::decode_prefix(bytes)?;
        if used != bytes.len() {
            return Err(MerkleError::Format("trailing bytes after proof"));
        }
        Ok(proof)
    }
}

/// Checks that `claimed` is the subtree root at `proof`'s position under `root`.
pub fn verify(root: &Digest, claimed: &Digest, proof: &MerkleProof) -> bool {
    let level = proof.subtree_level;
    if level > TREE_DEPTH || proof.siblings.len() != (TREE_DEPTH - level) as usize {
        return false;
    }
    let index = proof.leaf_index as u64;
    if index >= LEAF_COUNT as u64 || index & ((1u64 << level) - 1) != 0 {
        return false;
    }
    fold_path(*claimed, index >> level, &proof.siblings) == *root
}

/// Root of a 27-level tree whose only non-zero content is the given
/// `(byte address, level, subtree root)` fields.
pub fn compose_root(fields: &[(u32, u8, Digest)]) -> Result<Digest, MerkleError> {
    let zero = zero_hashes();
    let mut by_level: Vec<Vec<(u64, Digest)>> = vec![Vec::new(); TREE_DEPTH as usize + 1];
    for &(base, level, digest) in fields {
        if level > TREE_DEPTH {
            return Err(MerkleError::LevelTooLarge(level));
        }
        let leaf = (base as u64) / LEAF_BYTES as u64;
        if !(base as u64).is_multiple_of(LEAF_BYTES as u64) || leaf & ((1u64 << level) - 1) != 0 {
            return Err(MerkleError::Misaligned { index: leaf, level });
        }
        by_level[level as usize].push((leaf >> level, digest));
    }
    let mut current: BTreeMap<u64, Digest> = BTreeMap::new();
    for level in 0..=TREE_DEPTH {
        for &(idx, d) in &by_level[level as usize] {
            if current.insert(idx, d).is_some() {
                return Err(MerkleError::OverlappingFields { level, index: idx });
            }
        }
        if level == TREE_DEPTH {
            break;
        }
        let mut next = BTreeMap::new();
        for &idx in current.keys() {
            let parent = idx >> 1;
            if next.contains_key(&parent) {
                continue;
            }
            let z = zero[level as usize];
            let left = *current.get(&(parent << 1)).unwrap_or(&z);
            let right = *current.get(&((parent << 1) | 1)).unwrap_or(&z);
            next.insert(parent, hash_node(&left, &right));
        }
        current = next;
    }
    Ok(current.get(&0).copied().unwrap_or(zero[TREE_DEPTH as usize]))
}

/// Leaves of a standalone height-`level` subtree holding `bytes` from its first
/// leaf on, zero padded. Returns every level's populated nodes.
fn region_levels(bytes: &[u8], level: u8) -> Result<Vec<Vec<Digest>>, MerkleError> {
    let capacity = LEAF_BYTES << level;
    if bytes.len() > capacity {
        return Err(MerkleError::RegionTooLarge {
            base: 0,
            len: bytes.len(),
            level,
        });
    }
    let zero = zero_hashes();
    let mut levels = Vec::with_capacity(level as usize + 1);
    let mut cur: Vec<Digest> = bytes
        .chunks(LEAF_BYTES)
        .map(|c| {
            let mut leaf = [0u8; LEAF_BYTES];
            leaf[..c.len()].copy_from_slice(c);
            hash_leaf(&leaf)
        })
        .collect();
    for l in 0..level {
        let next: Vec<Digest> = cur
            .chunks(2)
            .map(|pair| hash_node(&pair[0], pair.get(1).unwrap_or(&zero[l as usize])))
            .collect();
        levels.push(cur);
        cur = next;
    }
    levels.push(cur);
    Ok(levels)
}

/// Root of a height-`level` subtree whose leaves are `bytes` (zero padded).
/// Equals [`MemTree::subtree_root`] of a region holding the same bytes.
pub fn region_root(bytes: &[u8], level: u8) -> Result<Digest, MerkleError> {
    let levels = region_levels(bytes, level)?;
    Ok(levels[level as usize]
        .first()
        .copied()
        .unwrap_or(zero_hashes()[level as usize]))
}

/// Sibling path for leaf `chunk` inside a [`region_root`] subtree.
pub fn region_proof(bytes: &[u8], level: u8, chunk: u64) -> Result<Vec<Digest>, MerkleError> {
    if chunk >= 1u64 << level {
        return Err(MerkleError::IndexOutOfRange(chunk));
    }
    let levels = region_levels(bytes, level)?;
    let zero = zero_hashes();
    Ok((0..level)
        .map(|l| {
            let sib = (chunk >> l) ^ 1;
            levels[l as usize]
                .get(sib as usize)
                .copied()
                .unwrap_or(zero[l as usize])
        })
        .collect())
}

/// Sparse 27-level memory tree.
#[derive(Clone, Debug, Default)]
pub struct MemTree {
    leaves: HashMap<u32, Leaf>,
    /// Non-zero node digests keyed by (level, index), level 0 included.
    nodes: HashMap<(u8, u32), Digest>,
}

impl MemTree {
    pub fn new() -> Self {
        Self::default()
    }

    fn node(&self, level: u8, index: u32) -> Digest {
        self.nodes
            .get(&(level, index))
            .copied()
            .unwrap_or(zero_hashes()[level as usize])
    }

    fn set_node(&mut self, level: u8, index: u32, digest: Digest) {
        if digest == zero_hashes()[level as usize] {
            self.nodes.remove(&(level, index));
        } else {
            self.nodes.insert((level, index), digest);
        }
    }

    pub fn root(&self) -> Digest {
        self.node(TREE_DEPTH, 0)
    }

    pub fn leaf(&self, index: u32) -> Leaf {
        self.leaves.get(&index).copied().unwrap_or([0u8; LEAF_BYTES])
    }

    /// Number of stored (non-zero) leaves.
    pub fn populated_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn update_leaf(&mut self, index: u32, leaf: Leaf) -> Result<(), MerkleError> {
        if index >= LEAF_COUNT {
            return Err(MerkleError::IndexOutOfRange(index as u64));
        }
        if leaf == [0u8; LEAF_BYTES] {
            self.leaves.remove(&index);
        } else {
            self.leaves.insert(index, leaf);
        }
        let mut digest = hash_leaf(&leaf);
        let mut idx = index;
        self.set_node(0, idx, digest);
        for level in 0..TREE_DEPTH {
            let sib = self.node(level, idx ^ 1);
            digest = if idx & 1 == 0 {
                hash_node(&digest, &sib)
            } else {
                hash_node(&sib, &digest)
            };
            idx >>= 1;
            self.set_node(level + 1, idx, digest);
        }
        Ok(())
    }

    pub fn prove(&self, index: u32, subtree_level: u8) -> Result<MerkleProof, MerkleError> {
        if subtree_level > TREE_DEPTH {
            return Err(MerkleError::LevelTooLarge(subtree_level));
        }
        if index >= LEAF_COUNT {
            return Err(MerkleError::IndexOutOfRange(index as u64));
        }
        if index & ((1u32 << subtree_level) - 1) != 0 {
            return Err(MerkleError::Misaligned {
                index: index as u64,
                level: subtree_level,
            });
        }
        let siblings = (subtree_level..TREE_DEPTH)
            .map(|l| self.node(l, (index >> l) ^ 1))
            .collect();
        Ok(MerkleProof {
            leaf_index: index,
            subtree_level,
            siblings,
        })
    }

    fn check_region(base: u32, level: u8) -> Result<u32, MerkleError> {
        if level > TREE_DEPTH {
            return Err(MerkleError::LevelTooLarge(level));
        }
        let span = (LEAF_BYTES as u64) << level;
        if !(base as u64).is_multiple_of(span) {
            return Err(MerkleError::Misaligned {
                index: base as u64 / LEAF_BYTES as u64,
                level,
            });
        }
        Ok(base / LEAF_BYTES as u32)
    }

    /// Digest of the internal node covering `32 << level` bytes at `base`.
    pub fn subtree_root(&self, base: u32, level: u8) -> Result<Digest, MerkleError> {
        let leaf = Self::check_region(base, level)?;
        Ok(self.node(level, leaf >> level))
    }

    /// Proof for the field at byte address `base` of height `level`.
    pub fn prove_region(&self, base: u32, level: u8) -> Result<MerkleProof, MerkleError> {
        let leaf = Self::check_region(base, level)?;
        self.prove(leaf, level)
    }

    /// Writes `bytes` starting at a leaf-aligned address. Partial trailing
    /// leaves are zero padded (the rest of that leaf is overwritten).
    pub fn write_bytes(&mut self, base: u32, bytes: &[u8]) -> Result<(), MerkleError> {
        if !(base as usize).is_multiple_of(LEAF_BYTES) {
            return Err(MerkleError::Misaligned {
                index: base as u64,
                level: 0,
            });
        }
        let first = base / LEAF_BYTES as u32;
        if first as u64 + bytes.len().div_ceil(LEAF_BYTES) as u64 > LEAF_COUNT as u64 {
            return Err(MerkleError::RegionTooLarge {
                base: base as u64,
                len: bytes.len(),
                level: 0,
            });
        }
        for (i, chunk) in bytes.chunks(LEAF_BYTES).enumerate() {
            let mut leaf = [0u8; LEAF_BYTES];
            leaf[..chunk.len()].copy_from_slice(chunk);
            self.update_leaf(first + i as u32, leaf)?;
        }
        Ok(())
    }

    /// Reads `len` bytes starting at any address (wrapping is not allowed).
    pub fn read_bytes(&self, base: u32, len: usize) -> Vec<u8> {
        let mut out = Vec::with_capacity(len);
        let mut addr = base as u64;
        while out.len() < len && addr < (1u64 << 32) {
            let leaf = self.leaf((addr / LEAF_BYTES as u64) as u32);
            let off = (addr % LEAF_BYTES as u64) as usize;
            let take = (LEAF_BYTES - off).min(len - out.len());
            out.extend_from_slice(&leaf[off..off + take]);
            addr += take as u64;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use sha2::{Digest as _, Sha256};

    fn sha(parts: &[&[u8]]) -> [u8; 32] {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p);
        }
        h.finalize().into()
    }

    fn leaf_with(byte: u8) -> Leaf {
        let mut l = [0u8; 32];
        l[0] = byte;
        l[31] = byte.wrapping_mul(3);
        l
    }

    fn random_tree(rng: &mut ChaCha8Rng, n: usize) -> (MemTree, Vec<u32>) {
        let mut t = MemTree::new();
        let mut idx = Vec::new();
        for _ in 0..n {
            let i = rng.gen_range(0..LEAF_COUNT);
            let mut leaf = [0u8; 32];
            rng.fill(&mut leaf);
            t.update_leaf(i, leaf).unwrap();
            idx.push(i);
        }
        (t, idx)
    }

    #[test]
    fn empty_root_matches_independent_zero_chain() {
        // Z0 = H(0x00 || 0^32), Z_{k+1} = H(Z_k || Z_k), recomputed with sha2 directly.
        let mut z = sha(&[&[0u8], &[0u8; 32]]);
        for _ in 0..27 {
            z = sha(&[&z, &z]);
        }
        assert_eq!(MemTree::new().root().0, z);
        assert_eq!(MemTree::new().root(), zero_hashes()[27]);
    }

    #[test]
    fn nonzero_leaf_changes_root() {
        let mut t = MemTree::new();
        t.update_leaf(0, leaf_with(1)).unwrap();
        assert_ne!(t.root(), zero_hashes()[27]);
    }

    #[test]
    fn single_leaf_root_matches_oracle() {
        // Leaf 5 set: fold with zero siblings by hand.
        let leaf = leaf_with(9);
        let mut t = MemTree::new();
        t.update_leaf(5, leaf).unwrap();
        let mut zeros = vec![sha(&[&[0u8], &[0u8; 32]])];
        for _ in 0..27 {
            let z = *zeros.last().unwrap();
            zeros.push(sha(&[&z, &z]));
        }
        let mut acc = sha(&[&[0u8], &leaf]);
        let mut idx = 5u32;
        for z in zeros.iter().take(27) {
            acc = if idx & 1 == 0 { sha(&[&acc, z]) } else { sha(&[z, &acc]) };
            idx >>= 1;
        }
        assert_eq!(t.root().0, acc);

        let mut other = MemTree::new();
        other.update_leaf(6, leaf).unwrap();
        assert_ne!(other.root(), t.root());
    }

    #[test]
    fn write_then_restore() {
        let mut t = MemTree::new();
        t.update_leaf(7, leaf_with(3)).unwrap();
        let before = t.root();
        t.update_leaf(7, leaf_with(4)).unwrap();
        assert_ne!(t.root(), before);
        t.update_leaf(7, leaf_with(3)).unwrap();
        assert_eq!(t.root(), before);
    }

    #[test]
    fn zero_write_to_absent_leaf_is_noop() {
        let mut t = MemTree::new();
        t.update_leaf(100, leaf_with(1)).unwrap();
        let before = t.root();
        t.update_leaf(12345, [0u8; 32]).unwrap();
        assert_eq!(t.root(), before);
        assert_eq!(t.populated_leaves(), 1);
    }

    #[test]
    fn out_of_range_index() {
        let mut t = MemTree::new();
        assert_eq!(
            t.update_leaf(LEAF_COUNT, [1u8; 32]),
            Err(MerkleError::IndexOutOfRange(LEAF_COUNT as u64))
        );
        assert!(t.prove(LEAF_COUNT, 0).is_err());
    }

    #[test]
    fn misaligned_prove_and_subtree() {
        let t = MemTree::new();
        assert!(matches!(t.prove(3, 2), Err(MerkleError::Misaligned { .. })));
        assert!(matches!(t.subtree_root(32, 1), Err(MerkleError::Misaligned { .. })));
    }

    #[test]
    fn whole_tree_proof_is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (t, _) = random_tree(&mut rng, 10);
        let p = t.prove(0, 27).unwrap();
        assert!(p.siblings.is_empty());
        assert!(verify(&t.root(), &t.root(), &p));
        assert!(!verify(&t.root(), &t.root().flip_bit(3), &p));
        assert_eq!(t.subtree_root(0, 27).unwrap(), t.root());
    }

    #[test]
    fn single_leaf_proof_size() {
        let t = MemTree::new();
        let p = t.prove(17, 0).unwrap();
        assert_eq!(p.siblings.len() * 32, 27 * 32);
        assert_eq!(p.to_bytes().len(), 6 + 27 * 32);
    }

    #[test]
    fn subtree_root_definitions() {
        let mut t = MemTree::new();
        assert_eq!(t.subtree_root(0x0300_0000, 12).unwrap(), zero_hashes()[12]);
        let leaf = leaf_with(0x42);
        t.update_leaf(0x0300_0000 / 32, leaf).unwrap();
        assert_eq!(t.subtree_root(0x0300_0000, 0).unwrap(), hash_leaf(&leaf));
        let before = t.subtree_root(0x0200_0000, 3).unwrap();
        t.write_bytes(0x0200_0000, &[1, 2, 3]).unwrap();
        let after = t.subtree_root(0x0200_0000, 3).unwrap();
        assert_ne!(before, after);
        t.write_bytes(0x0200_0000, &[1, 2, 3]).unwrap();
        assert_eq!(t.subtree_root(0x0200_0000, 3).unwrap(), after);
    }

    #[test]
    fn region_root_matches_tree() {
        let bytes: Vec<u8> = (0..200u32).map(|i| (i * 7) as u8).collect();
        let mut t = MemTree::new();
        t.write_bytes(0x0300_0000, &bytes).unwrap();
        assert_eq!(
            region_root(&bytes, 12).unwrap(),
            t.subtree_root(0x0300_0000, 12).unwrap()
        );
        let key = region_root(&bytes, 12).unwrap();
        for chunk in 0..8u64 {
            let sibs = region_proof(&bytes, 12, chunk).unwrap();
            let mut leaf = [0u8; 32];
            let start = (chunk as usize * 32).min(bytes.len());
            let end = (start + 32).min(bytes.len());
            leaf[..end - start].copy_from_slice(&bytes[start..end]);
            assert_eq!(fold_path(hash_leaf(&leaf), chunk, &sibs), key);
        }
        assert_eq!(region_root(&[], 12).unwrap(), zero_hashes()[12]);
        assert!(region_root(&[1u8; 33], 0).is_err());
    }

    #[test]
    fn compose_matches_direct_construction() {
        let mut t = MemTree::new();
        t.write_bytes(0, &[1u8; 100]).unwrap();
        t.write_bytes(0x0200_0000, &[2u8; 64]).unwrap();
        t.write_bytes(0x0800_0000, &[3u8; 32]).unwrap();
        let fields = [
            (0, 14, t.subtree_root(0, 14).unwrap()),
            (0x0200_0000, 3, t.subtree_root(0x0200_0000, 3).unwrap()),
            (0x0800_0000, 12, t.subtree_root(0x0800_0000, 12).unwrap()),
        ];
        assert_eq!(compose_root(&fields).unwrap(), t.root());
        assert_eq!(compose_root(&[]).unwrap(), zero_hashes()[27]);
        let overlap = [(0, 14, Digest::ZERO), (0, 14, Digest::ZERO)];
        assert!(compose_root(&overlap).is_err());
    }

    #[test]
    fn proof_encoding_round_trip_and_truncation() {
        let mut t = MemTree::new();
        t.update_leaf(99, leaf_with(7)).unwrap();
        let p = t.prove(96, 5).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(MerkleProof::from_bytes(&bytes).unwrap(), p);
        assert!(MerkleProof::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn read_bytes_spans_leaves() {
        let mut t = MemTree::new();
        let data: Vec<u8> = (0..70u8).collect();
        t.write_bytes(64, &data).unwrap();
        assert_eq!(t.read_bytes(64 + 30, 10), data[30..40].to_vec());
    }

    #[test]
    fn soundness_sampling() {
        // 1000 random single-bit mutations of (claimed, proof bundle) all fail.
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let (t, idx) = random_tree(&mut rng, 64);
        let root = t.root();
        let mut failures = 0;
        for trial in 0..1000 {
            let leaf = idx[trial % idx.len()];
            let level = [0u8, 0, 1, 4][trial % 4];
            let aligned = leaf & !((1u32 << level) - 1);
            let proof = t.prove(aligned, level).unwrap();
            let claimed = t.node(level, aligned >> level);
            assert!(verify(&root, &claimed, &proof));
            let mut bundle = claimed.0.to_vec();
            bundle.extend(proof.to_bytes());
            let bit = rng.gen_range(0..bundle.len() * 8);
            bundle[bit / 8] ^= 1 << (bit % 8);
            let mutated_claim = Digest::from_slice(&bundle[..32]).unwrap();
            let ok = match MerkleProof::from_bytes(&bundle[32..]) {
                Ok(p) => verify(&root, &mutated_claim, &p),
                Err(_) => false,
            };
            if ok {
                failures += 1;
            }
        }
        assert_eq!(failures, 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn root_independent_of_insertion_order(
            entries in proptest::collection::btree_map(0u32..LEAF_COUNT, any::<[u8; 32]>(), 1..24),
            seed in any::<u64>(),
        ) {
            let mut forward = MemTree::new();
            for (&i, l) in &entries {
                forward.update_leaf(i, *l).unwrap();
            }
            let mut shuffled: Vec<_> = entries.iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            shuffled.shuffle(&mut rng);
            let mut other = MemTree::new();
            // Interleave junk writes that are later overwritten.
            for &(&i, _) in &shuffled {
                other.update_leaf(i, [0xAA; 32]).unwrap();
            }
            for &(&i, &l) in &shuffled {
                other.update_leaf(i, l).unwrap();
            }
            prop_assert_eq!(forward.root(), other.root());
        }

        #[test]
        fn prove_verify_complete(
            entries in proptest::collection::vec((0u32..LEAF_COUNT, any::<[u8; 32]>()), 1..16),
            level in 0u8..=27,
            pick in any::<prop::sample::Index>(),
        ) {
            let mut t = MemTree::new();
            for (i, l) in &entries {
                t.update_leaf(*i, *l).unwrap();
            }
            let (leaf, _) = entries[pick.index(entries.len())];
            let aligned = if level == 27 { 0 } else { leaf & !((1u32 << level) - 1) };
            let proof = t.prove(aligned, level).unwrap();
            let claimed = t.subtree_root(aligned * 32, level).unwrap();
            prop_assert!(verify(&t.root(), &claimed, &proof));
        }
    }
}
