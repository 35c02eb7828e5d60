//! Key-derived deterministic random streams.
//!
//! A [`RngStream`] is only a 64-bit key. Children are derived by mixing the
//! parent key with a `(tag, index)` pair, so deriving child `k` never depends
//! on which other children were derived before it. Actual sampling goes
//! through [`RngStream::generator`], a ChaCha8 generator seeded from the key.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Purpose tags for child streams.
pub mod tags {
    pub const PERMUTATIONS: u64 = 0x7065_726d;
    pub const PERMUTATION_COLUMN: u64 = 0x636f_6c75;
    pub const HOLDOUT: u64 = 0x686f_6c64;
    pub const FIT: u64 = 0x6669_7420;
    pub const TREE: u64 = 0x7472_6565;
    pub const REPLICATION: u64 = 0x7265_706c;
    pub const SUBSAMPLE: u64 = 0x7375_6273;
    pub const SPLIT: u64 = 0x7370_6c69;
    pub const FOLDS: u64 = 0x666f_6c64;
    pub const FEATURES: u64 = 0x6665_6174;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const TUNING: u64 = 0x7475_6e65;
    pub const METHOD: u64 = 0x6d65_7468;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    key: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            key: mix(seed ^ 0x6d69_6e73_6861_7021),
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    /// Pure function of `(self, tag, index)`.
    pub fn child(&self, tag: u64, index: u64) -> RngStream {
        let a = mix(self.key ^ mix(tag.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        RngStream {
            key: mix(a ^ mix(index.wrapping_mul(0xd1b5_4a32_d192_ed03).wrapping_add(1))),
        }
    }

    pub fn generator(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.key)
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
