//! Named random streams derived from one root seed.
//!
//! Every consumer of randomness (parameter init, data order, latent noise,
//! scene generation) draws from its own stream so that changing one part of
//! an experiment never shifts the draws seen by another. Runs of different
//! loss conditions with the same root seed therefore share initial weights
//! and batch order, which is what the paired tests assume.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a 64-bit seed for `stream` (plus an arbitrary index path) from `root`.
pub fn derive(root: u64, stream: &str, index: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update((stream.len() as u64).to_le_bytes());
    h.update(stream.as_bytes());
    for i in index {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

pub fn rng(root: u64, stream: &str, index: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, index))
}

pub const INIT: &str = "init";
pub const DATA_ORDER: &str = "data-order";
pub const LATENT_NOISE: &str = "latent-noise";
pub const SCENE: &str = "scene";
