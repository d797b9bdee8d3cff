//! 32-byte digests and the process-wide hash selection.
//!
//! Every commitment in the crate (Merkle nodes, VM state roots, preimage keys,
//! attention-challenge lottery tickets) goes through [`hash_parts`]. SHA-256 is
//! the default; Keccak-256 can be selected once at startup for experiments.
//! Serialized artifacts record the active [`HashKind`] id in their header.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU8, Ordering};

use sha2::{Digest as _, Sha256};
use sha3::Keccak256;

/// Environment variable consulted by [`HashKind::from_env`].
pub const HASH_ENV_VAR: &str = "OPML_HASH";

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s.trim_start_matches("0x"), &mut out)?;
        Ok(Digest(out))
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        <[u8; 32]>::try_from(bytes).ok().map(Digest)
    }

    /// Copy with bit `bit` (0 = LSB of byte 0) inverted.
    pub fn flip_bit(&self, bit: usize) -> Self {
        let mut out = self.0;
        out[(bit / 8) % 32] ^= 1 << (bit % 8);
        Digest(out)
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.to_hex())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl serde::Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> serde::Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <String as serde::Deserialize>::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

impl From<[u8; 32]> for Digest {
    fn from(b: [u8; 32]) -> Self {
        Digest(b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum HashKind {
    Sha256 = 1,
    Keccak256 = 2,
}

impl HashKind {
    pub const DEFAULT: HashKind = HashKind::Sha256;

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(HashKind::Sha256),
            2 => Some(HashKind::Keccak256),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HashKind::Sha256 => "sha256",
            HashKind::Keccak256 => "keccak256",
        }
    }

    /// Reads [`HASH_ENV_VAR`]; unset means the default.
    pub fn from_env() -> Result<Self, UnknownHash> {
        match std::env::var(HASH_ENV_VAR) {
            Ok(v) if !v.is_empty() => v.parse(),
            _ => Ok(HashKind::DEFAULT),
        }
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown hash function `{0}` (expected sha256 or keccak256)")]
pub struct UnknownHash(pub String);

impl FromStr for HashKind {
    type Err = UnknownHash;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sha256" | "sha-256" => Ok(HashKind::Sha256),
            "keccak256" | "keccak-256" | "keccak" => Ok(HashKind::Keccak256),
            other => Err(UnknownHash(other.to_string())),
        }
    }
}

static ACTIVE: AtomicU8 = AtomicU8::new(HashKind::DEFAULT as u8);

/// Hash function currently used for all commitments.
pub fn active() -> HashKind {
    HashKind::from_id(ACTIVE.load(Ordering::Relaxed)).unwrap_or(HashKind::DEFAULT)
}

/// Switch the process-wide hash. Call before building any tree: digests
/// computed under different hashes never compare equal.
pub fn set_active(kind: HashKind) {
    ACTIVE.store(kind as u8, Ordering::Relaxed);
}

/// Hash the concatenation of `parts` with the active hash.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    hash_parts_with(active(), parts)
}

pub fn hash_parts_with(kind: HashKind, parts: &[&[u8]]) -> Digest {
    match kind {
        HashKind::Sha256 => {
            let mut h = Sha256::new();
            for p in parts {
                h.update(p);
            }
            Digest(h.finalize().into())
        }
        HashKind::Keccak256 => {
            let mut h = Keccak256::new();
            for p in parts {
                h.update(p);
            }
            Digest(h.finalize().into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip() {
        let d = hash_parts(&[b"abc"]);
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        assert_eq!(
            hash_parts_with(HashKind::Sha256, &[b"abc"]).to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn parts_concatenate() {
        assert_eq!(hash_parts(&[b"ab", b"c"]), hash_parts(&[b"abc"]));
    }

    #[test]
    fn kind_names() {
        assert_eq!("KECCAK256".parse::<HashKind>().unwrap(), HashKind::Keccak256);
        assert!("md5".parse::<HashKind>().is_err());
        for k in [HashKind::Sha256, HashKind::Keccak256] {
            assert_eq!(HashKind::from_id(k.id()), Some(k));
        }
    }
}
