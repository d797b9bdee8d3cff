//! Deterministic, label-separated random streams.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest as _, Sha256};

/// ChaCha8 keyed by `sha256(seed_le || label)`. Independent of the active
/// commitment hash so that seeds reproduce across hash choices.
pub fn stream(seed: u64, label: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// First `u64` of [`stream`]; used to hand each party its own seed.
pub fn derive(seed: u64, label: &str) -> u64 {
    stream(seed, label).gen()
}
