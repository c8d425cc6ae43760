//! Seed derivation.
//!
//! Every random stream in the crate is a ChaCha8 generator keyed by
//! `(seed, stream, index)`, so per-point draws do not depend on how work is
//! split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named sub-streams. Values are arbitrary but frozen: changing one changes
/// every dataset generated with it.
pub mod stream {
    pub const GEOMETRY: u64 = 0x01;
    pub const ROTATION: u64 = 0x02;
    pub const TRANSLATION: u64 = 0x03;
    pub const POINTS: u64 = 0x10;
    pub const AUGMENT: u64 = 0x20;
    pub const TEST_AUGMENT: u64 = 0x21;
    pub const SHUFFLE: u64 = 0x30;
    pub const INIT: u64 = 0x40;
    pub const BATCHES: u64 = 0x41;
    pub const ATTACK: u64 = 0x50;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index)
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
