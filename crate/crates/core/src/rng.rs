//! Seeded random streams.
//!
//! Every stochastic choice in the crate draws from a ChaCha8 generator keyed
//! by the user seed plus a fixed stream id, so unrelated consumers never
//! share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub mod stream {
    pub const SYNTH_MAP: u64 = 1;
    pub const SYNTH_SEGMENTS: u64 = 2;
    pub const INIT: u64 = 10;
    pub const SPLIT: u64 = 11;
    pub const SHUFFLE: u64 = 12;
    pub const DROPOUT: u64 = 13;
    /// Retrieval repeats use `RETRIEVAL + repeat`.
    pub const RETRIEVAL: u64 = 100;
}

pub fn seeded(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
