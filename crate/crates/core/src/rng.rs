//! Seeded random streams.
//!
//! Every random draw in a simulation comes from a [`SimRng`] derived from the
//! master seed and a stream tag, so replays are bit-identical and independent
//! consumers never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub mod stream {
    pub const SHADOWING: u64 = 1;
    pub const MOTION: u64 = 2;
    pub const MEASUREMENT: u64 = 3;
    pub const START_POSE: u64 = 4;
    pub const OPTIMIZER: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `master`, a stream tag and an index.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn stream_rng(master: u64, stream: u64, index: u64) -> SimRng {
    SimRng::seed_from_u64(derive_seed(master, stream, index))
}
