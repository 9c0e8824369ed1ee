//! Sub-seed derivation. One user seed feeds every random component through
//! a labeled hash so each component's stream is independent of the others.

use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::nn::NnRng;

pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest is 32 bytes"))
}

pub fn rng_for(base: u64, label: &str) -> NnRng {
    NnRng::seed_from_u64(derive_seed(base, label))
}
