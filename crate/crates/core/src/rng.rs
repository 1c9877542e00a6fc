//! Named random substreams derived from one global seed.
//!
//! Each protocol draws from its own stream, so changing how many numbers one
//! component consumes never shifts another component's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub const SPLIT: &str = "split";
pub const TRAIN_SHUFFLE: &str = "train-shuffle";
pub const POOL_SAMPLING: &str = "pool-sampling";
pub const EPISODE_SAMPLING: &str = "episode-sampling";
pub const INIT: &str = "init";
pub const SYNTH: &str = "synth";

pub fn substream(seed: u64, name: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
