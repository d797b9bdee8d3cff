//! Key-value preimage store consulted by the `PREIMAGE` instruction.
//!
//! A key is the root of the height-[`PREIMAGE_LEVEL`] chunk tree over the
//! value bytes, so a single 32-byte chunk can be proven against its key with a
//! short sibling path. This is also exactly the subtree root the value would
//! have if written into a memory field of the same height.

use std::collections::HashMap;

use super::layout::{MAX_PREIMAGE_BYTES, MAX_PREIMAGE_CHUNKS, PREIMAGE_LEVEL};
use crate::hash::Digest;
use crate::merkle::{self, Leaf, LEAF_BYTES};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("preimage of {0} bytes exceeds the {max} byte limit", max = MAX_PREIMAGE_BYTES)]
    TooLarge(usize),
    #[error("value does not hash to key {0}")]
    KeyMismatch(Digest),
}

pub fn preimage_key(value: &[u8]) -> Result<Digest, OracleError> {
    merkle::region_root(value, PREIMAGE_LEVEL).map_err(|_| OracleError::TooLarge(value.len()))
}

/// Chunk `index` of `value`, zero padded past the end.
pub fn chunk_of(value: &[u8], index: u32) -> Leaf {
    let mut leaf = [0u8; LEAF_BYTES];
    let start = (index as usize).saturating_mul(LEAF_BYTES);
    if start < value.len() {
        let end = (start + LEAF_BYTES).min(value.len());
        leaf[..end - start].copy_from_slice(&value[start..end]);
    }
    leaf
}

#[derive(Clone, Debug, Default)]
pub struct PreimageOracle {
    map: HashMap<Digest, Vec<u8>>,
}

impl PreimageOracle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, value: Vec<u8>) -> Result<Digest, OracleError> {
        let key = preimage_key(&value)?;
        self.map.insert(key, value);
        Ok(key)
    }

    pub fn insert_with_key(&mut self, key: Digest, value: Vec<u8>) -> Result<(), OracleError> {
        if preimage_key(&value)? != key {
            return Err(OracleError::KeyMismatch(key));
        }
        self.map.insert(key, value);
        Ok(())
    }

    pub fn get(&self, key: &Digest) -> Option<&[u8]> {
        self.map.get(key).map(Vec::as_slice)
    }

    pub fn contains(&self, key: &Digest) -> bool {
        self.map.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn chunk(&self, key: &Digest, index: u32) -> Option<Leaf> {
        self.get(key).map(|v| chunk_of(v, index))
    }

    /// Sibling path proving chunk `index` against `key`.
    pub fn chunk_proof(&self, key: &Digest, index: u32) -> Option<Vec<Digest>> {
        if index >= MAX_PREIMAGE_CHUNKS {
            return None;
        }
        let value = self.get(key)?;
        merkle::region_proof(value, PREIMAGE_LEVEL, index as u64).ok()
    }
}

pub fn verify_chunk(key: &Digest, index: u32, chunk: &Leaf, siblings: &[Digest]) -> bool {
    index < MAX_PREIMAGE_CHUNKS
        && siblings.len() == PREIMAGE_LEVEL as usize
        && merkle::fold_path(merkle::hash_leaf(chunk), index as u64, siblings) == *key
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_checks_key() {
        let mut o = PreimageOracle::new();
        let key = o.insert(b"hello preimage".to_vec()).unwrap();
        assert_eq!(o.get(&key).unwrap(), b"hello preimage");
        assert!(o.insert_with_key(key, b"other".to_vec()).is_err());
        assert!(o.insert(vec![0u8; MAX_PREIMAGE_BYTES + 1]).is_err());
    }

    #[test]
    fn chunks_prove_against_key() {
        let mut o = PreimageOracle::new();
        let value: Vec<u8> = (0..100u8).collect();
        let key = o.insert(value.clone()).unwrap();
        for i in 0..5 {
            let c = o.chunk(&key, i).unwrap();
            let p = o.chunk_proof(&key, i).unwrap();
            assert!(verify_chunk(&key, i, &c, &p));
            if i < 3 {
                assert!(!verify_chunk(&key, i ^ 1, &c, &p));
            }
        }
        assert_eq!(o.chunk(&key, 4).unwrap(), [0u8; 32]);
    }
}
