//! Keyed, reproducible random streams.
//!
//! Every stochastic stage derives its generator from the run seed plus a
//! tuple of integer keys (season, hour, site, scenario, ...), so results do
//! not depend on scheduling order when work is spread across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a seed and keys into a single 64-bit stream id.
pub fn stream_id(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix(seed), |acc, &k| splitmix(acc ^ splitmix(k)))
}

/// Independent generator for `(seed, keys...)`.
pub fn stream(seed: u64, keys: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(stream_id(seed, keys))
}

/// Stage tags keep streams of different pipeline stages apart.
pub mod tag {
    pub const WIND: u64 = 1;
    pub const AMBULANCE: u64 = 2;
    pub const CHAIN: u64 = 3;
    pub const EVAL_WIND: u64 = 4;
    pub const EVAL_DRONE: u64 = 5;
    pub const EVAL_AMBULANCE: u64 = 6;
    pub const FAILURES: u64 = 7;
    pub const PRIOR: u64 = 8;
    pub const SIMULATE: u64 = 9;
    pub const GP_RESTARTS: u64 = 10;
    pub const CV_FOLDS: u64 = 11;
}
