//! Named random sub-streams derived from a single run seed.
//!
//! Every consumer (split, init, shuffle, crop, synthetic samples) gets its own
//! ChaCha stream keyed by `(seed, name)`, with an optional index selecting the
//! stream within that key. Streams never depend on how many values another
//! consumer drew.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const INIT: &str = "init";
pub const SHUFFLE: &str = "shuffle";
pub const CROP: &str = "crop";
pub const SYNTH: &str = "synth";

pub fn stream(seed: u64, name: &str) -> StreamRng {
    indexed_stream(seed, name, 0)
}

pub fn indexed_stream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let key: [u8; 32] = hasher.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
