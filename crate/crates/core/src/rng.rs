//! Seeded random streams.
//!
//! Every consumer draws from its own ChaCha stream keyed by `(seed, stream)`,
//! so adding a consumer never shifts the numbers another one sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub mod streams {
    pub const SCORES: u64 = 0x5c0e;
    pub const WEIGHTS: u64 = 0x3e17;
    pub const SHUFFLE: u64 = 0x5f1e;
    pub const SYNTH_PROTOTYPES: u64 = 0x9a07;
    pub const SYNTH_SAMPLES: u64 = 0x9a5a;
    pub const SPLIT: u64 = 0x5b17;
    pub const BENCH: u64 = 0xbe9c;
}

/// Counter-based generator for `(seed, stream, index)`.
pub fn stream(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index);
    rng
}
