//! Independent RNG streams derived from one experiment seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SOURCE_BATCHES: u64 = 1;
pub const STREAM_TARGET_BATCHES: u64 = 2;
pub const STREAM_COMPLEMENT: u64 = 3;
pub const STREAM_ENCODER_INIT: u64 = 4;
pub const STREAM_PROTOTYPE_INIT: u64 = 5;

/// SplitMix64 finalizer over `base` mixed with `stream` and `index`.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut x = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream_rng(base: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, stream, index))
}
