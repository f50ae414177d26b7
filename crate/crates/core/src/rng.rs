//! Counter-based seed derivation.
//!
//! Every random decision in a run draws from a stream identified by a path of
//! integers (root seed, epoch, task, trial, episode, ...). Streams are derived
//! by hashing, so the order in which parallel work finishes never changes
//! which numbers a given trial sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random generator used throughout the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// One round of the splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds `path` into `root`, producing a decorrelated child seed.
pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p.wrapping_add(GOLDEN))))
}

/// A generator for the stream at `path` under `root`.
pub fn stream(root: u64, path: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(root, path))
}

/// Domain tags keep streams for different purposes apart even when they
/// share numeric path components.
pub mod tags {
    pub const SOKOBAN_LAYOUT: u64 = 0x50_4B;
    pub const MINE_ORDER: u64 = 0x4D_53;
    pub const COIN_ARMS: u64 = 0x43_4E;
    pub const TRAIN_TASK: u64 = 0x54_54;
    pub const TRAIN_ROLLOUT: u64 = 0x54_52;
    pub const EVAL: u64 = 0x45_56;
    pub const EPISODE: u64 = 0x45_50;
    pub const REFLECT: u64 = 0x52_46;
}
