//! Deterministic seed derivation.
//!
//! Every random stream in a run is keyed by the experiment's master seed, a
//! component tag and a list of indices (client id, round, ...). The derived
//! seed is the first eight bytes (little endian) of
//! `SHA-256(master_le || tag || 0x00 || idx0_le || idx1_le || ...)`.
//! Adding a new component tag never perturbs the streams of existing ones.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const TAG_DATASET: &str = "dataset";
pub const TAG_PARTITION: &str = "partition";
pub const TAG_INIT: &str = "init";
pub const TAG_TRAIN: &str = "train";
pub const TAG_POISON: &str = "poison";

pub fn derive_seed(master: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update([0u8]);
    for idx in indices {
        hasher.update(idx.to_le_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// The RNG used by every seeded component.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
