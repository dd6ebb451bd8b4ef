//! Keyed random streams.
//!
//! Every consumer (problem sampling, network initialisation, action sampling,
//! minibatch shuffling, evaluation suites) draws from its own ChaCha stream,
//! selected by a key, so that adding draws to one consumer never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream keys. The low 32 bits are free for an index (environment, problem).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKey {
    Problems = 1,
    NetworkInit = 2,
    Actions = 3,
    Minibatches = 4,
    EvalSuite = 5,
    Baseline = 6,
    Test = 7,
}

pub fn stream(seed: u64, key: StreamKey, index: u32) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((key as u64) << 32) | index as u64);
    rng
}

/// SplitMix64 finaliser; used to derive child seeds from a parent seed and an index.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
