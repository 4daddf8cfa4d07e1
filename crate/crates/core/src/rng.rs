//! Counter-derived random streams.
//!
//! Every random operation receives a generator derived from the run seed
//! through a path of integer keys, so any layer, replica or Monte Carlo
//! draw can be replayed on its own and parallel work does not depend on
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains used across the crate.
pub mod domain {
    pub const REPLICAS: u64 = 0x5245_504c;
    pub const LIMIT: u64 = 0x4c49_4d54;
    pub const PROBES: u64 = 0x5052_4f42;
    pub const ORACLE: u64 = 0x4f52_434c;
    pub const COMPRESS: u64 = 0x434f_4d50;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A node in the tree of random streams rooted at a run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SeedStream {
    state: u64,
}

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream { state: splitmix64(seed) }
    }

    /// Child stream for `key`. Distinct keys give unrelated streams.
    pub fn substream(&self, key: u64) -> Self {
        SeedStream {
            state: splitmix64(self.state ^ splitmix64(key.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}
