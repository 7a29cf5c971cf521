//! Seeded, splittable randomness.
//!
//! Every random decision in the crate is drawn from a [`RngStream`], a
//! `(seed, stream)` pair that names one ChaCha8 keystream. Child streams are
//! derived by hashing an entity id (a cluster, a user, a trial) into the stream
//! id, so the draws for one entity never depend on how many draws another
//! entity made or in which order entities were processed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The concrete generator handed out by [`RngStream::rng`].
pub type StreamRng = ChaCha8Rng;

/// A named, reproducible stream of random numbers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Root stream for a user-supplied seed.
    pub const fn from_seed(seed: u64) -> Self {
        Self::new(seed, 0)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child stream for `entity`. Distinct entities map to distinct streams
    /// with overwhelming probability; the mapping is a fixed function of
    /// `(seed, stream, entity)`.
    pub fn derive(&self, entity: u64) -> Self {
        let mixed = splitmix64(splitmix64(self.stream ^ splitmix64(self.seed)) ^ entity);
        Self::new(self.seed, mixed)
    }

    /// Child stream keyed by a short ASCII tag, for separating mechanism stages.
    pub fn derive_tag(&self, tag: &str) -> Self {
        // FNV-1a
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        self.derive(h)
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
