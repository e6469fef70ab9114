//! Deterministic seed derivation so every random draw is replayable from
//! a master seed, independent of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive a 64-bit seed from a master seed and a labelled path.
pub fn derive(master: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("32-byte digest"))
}

pub fn rng(master: u64, parts: &[&str]) -> StreamRng {
    StreamRng::seed_from_u64(derive(master, parts))
}

/// Stream used for the reranking draws of one feed load.
pub fn load_rng(master: u64, participant_id: &str, load_seq: u64) -> StreamRng {
    rng(master, &["load", participant_id, &load_seq.to_string()])
}

/// Stream for the `index`-th replicate of a simulation or permutation run.
pub fn draw_rng(master: u64, label: &str, index: u64) -> StreamRng {
    rng(master, &[label, &index.to_string()])
}
