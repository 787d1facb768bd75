//! Keyed random-number substreams.
//!
//! Every draw made by the solvers comes from a stream addressed by
//! `(iteration, stage, purpose)`. Streams are derived from the master seed by
//! a SplitMix64 hash of the key and seed a ChaCha8 generator, so a given key
//! always yields the same sequence regardless of what other streams were
//! consumed. Runs that differ only in how they use one purpose (for example
//! with and without importance sampling) therefore share the draws of every
//! other purpose.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// What a substream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    /// Noise for the auxiliary quantile update (and the trajectory).
    USample = 1,
    /// Noise for the value-function update.
    QSample = 2,
    /// Exploration coin and uniform pair in ε-greedy sampling.
    Explore = 3,
    /// Initial state-action pair of an iteration.
    InitState = 4,
    /// Scenario generation for sample-average approximation.
    Scenario = 5,
    /// Free-form experiments and tests.
    Aux = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Generator for the substream `(iteration, stage, purpose)`.
    pub fn stream(&self, iteration: u64, stage: usize, purpose: Purpose) -> ChaCha8Rng {
        let mut h = splitmix64(self.seed);
        h = splitmix64(h ^ iteration);
        h = splitmix64(h ^ stage as u64);
        h = splitmix64(h ^ purpose as u64);
        ChaCha8Rng::seed_from_u64(h)
    }
}
