//! Seeded generators. Every random decision in the crate draws from a
//! ChaCha stream derived from one master seed plus a stream id, so results
//! never depend on scheduling or on how many other draws happened elsewhere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const NEGATIVES: u64 = 1;
pub(crate) const SPLIT_POSITIVES: u64 = 2;
pub(crate) const SPLIT_NEGATIVES: u64 = 3;
pub(crate) const TRAIN_INIT: u64 = 4;
pub(crate) const KMEANS: u64 = 5;
pub(crate) const SYNTH: u64 = 6;
/// Per-user streams live above this offset.
pub(crate) const USER_BASE: u64 = 1 << 32;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
