//! Deterministic seeding. Every random stream in the crate is a ChaCha8
//! generator keyed by a user seed plus a fixed purpose tag, so independent
//! components never share a stream and runs are reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose tags for [`derive`].
pub mod tag {
    pub const LAYOUT: u64 = 0x4c41_594f;
    pub const DQN: u64 = 0x4451_4e00;
    pub const DDPG: u64 = 0x4444_5047;
    pub const DDPG_ONLY: u64 = 0x4444_4f4e;
    pub const FADING: u64 = 0x4641_4445;
    pub const EVAL: u64 = 0x4556_414c;
    pub const INIT: u64 = 0x494e_4954;
}

/// splitmix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, tag: u64) -> u64 {
    mix(mix(seed) ^ tag)
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(seed: u64, tag: u64) -> Rng {
    rng(derive(seed, tag))
}
