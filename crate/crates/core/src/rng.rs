//! Named random sub-streams.
//!
//! Every stochastic component draws from its own stream, derived from a root
//! seed plus a label path such as `("split", replicate)`. Streams never share
//! state, so the order in which jobs run cannot change any draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng64 = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A seed that can be split into independent child seeds by label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream(u64);

impl SeedStream {
    pub fn new(seed: u64) -> Self {
        SeedStream(seed)
    }

    pub fn seed(&self) -> u64 {
        self.0
    }

    /// Child stream for a named component.
    pub fn child(&self, name: &str) -> SeedStream {
        let mut h = splitmix64(self.0 ^ 0x6A09_E667_F3BC_C908);
        for b in name.bytes() {
            h = splitmix64(h ^ u64::from(b));
        }
        SeedStream(h)
    }

    /// Child stream for an indexed item (replicate, chunk, tree, ...).
    pub fn index(&self, i: u64) -> SeedStream {
        SeedStream(splitmix64(splitmix64(self.0 ^ 0xBB67_AE85_84CA_A73B).wrapping_add(i)))
    }

    pub fn rng(&self) -> Rng64 {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for SeedStream {
    fn from(s: u64) -> Self {
        SeedStream(s)
    }
}
