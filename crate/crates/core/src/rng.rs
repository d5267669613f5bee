//! Seed derivation. Every random stream in the crate is a ChaCha generator
//! keyed by a base seed plus a purpose tag and an index, so any batch or
//! augmentation can be regenerated without replaying earlier draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ stream) ^ index)
}

pub fn stream(seed: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, stream, index))
}

pub mod streams {
    pub const INIT: u64 = 1;
    pub const TRIPLETS: u64 = 2;
    pub const FINETUNE: u64 = 3;
    pub const PAIRS: u64 = 4;
    pub const EPISODES: u64 = 5;
    pub const SPLITS: u64 = 6;
    pub const SYNTHETIC: u64 = 7;
}
