//! Counter-based random streams.
//!
//! Every random draw in a simulation is addressed by `(seed, stream, step)`:
//! the ChaCha stream id selects a particle (or replica) and the word
//! position selects the time step, so increments do not depend on how work
//! is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Words reserved per step in one stream.
const WORDS_PER_STEP: u128 = 1 << 16;

/// Stream id reserved for initial-condition sampling.
pub const INIT_STREAM: u64 = u64::MAX;

/// Gaussian increments addressed by `(stream, step)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStreams {
    pub seed: u64,
}

impl NoiseStreams {
    pub fn new(seed: u64) -> Self {
        NoiseStreams { seed }
    }

    /// Fills `out` with independent standard normals for `(stream, step)`.
    pub fn gaussian(&self, stream: u64, step: u64, out: &mut [f64]) {
        use rand::Rng;
        let mut rng = self.at(stream, step);
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }

    /// A generator positioned at `(stream, step)`.
    pub fn at(&self, stream: u64, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng.set_word_pos(step as u128 * WORDS_PER_STEP);
        rng
    }
}

/// Deterministically derives a child seed, e.g. one per replica.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    rng.set_stream(tag);
    rng.next_u64()
}

/// A fresh generator for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    NoiseStreams::new(seed).at(stream, 0)
}
