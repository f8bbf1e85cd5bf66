//! Seeded random streams.
//!
//! Every stochastic operation takes an explicit generator. Generators are
//! ChaCha8 (counter-based, platform-independent output) keyed by a 64-bit
//! seed and a 64-bit stream id, so independent consumers never share state.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream ids used across the crate.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const LORA_INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const CORPUS: u64 = 6;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for epoch-keyed consumers such as shuffling.
pub fn epoch_stream(seed: u64, stream_id: u64, epoch: u64) -> Rng {
    let mut rng = stream(seed, stream_id);
    // Each epoch starts at a disjoint block of the keystream.
    rng.set_word_pos((epoch as u128) << 64);
    rng
}
