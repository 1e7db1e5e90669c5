//! Hierarchical seed splitting.
//!
//! Every random stream is derived from one 64-bit root seed plus a path of
//! labels, so results do not depend on thread count or evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A node in the seed tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Seed(pub u64);

impl Seed {
    pub fn child(self, label: u64) -> Seed {
        Seed(splitmix64(self.0 ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019))))
    }

    /// Child keyed by a short string tag.
    pub fn named(self, tag: &str) -> Seed {
        // FNV-1a over the tag bytes.
        let mut h: u64 = 0xCBF2_9CE4_8422_2325;
        for b in tag.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.child(h)
    }

    pub fn rng(self) -> Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}
