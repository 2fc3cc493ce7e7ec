//! Deterministic stream-splitting random numbers.
//!
//! Every stochastic routine draws from a counter-based ChaCha stream keyed by
//! `(run seed, purpose, stream index)`. Streams never overlap, so paths can be
//! generated in parallel in any order and still reproduce bit-identically on
//! every run with the same seed.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags keep streams of different subsystems disjoint even when they
/// share a run seed and stream index.
pub mod purpose {
    pub const MARKET: u64 = 0x4d41_524b_4554_0001;
    pub const REWEIGHT: u64 = 0x5257_4749_4754_0002;
    pub const FROZEN: u64 = 0x4652_4f5a_454e_0003;
    pub const FIXED_POINT: u64 = 0x4649_5850_5420_0004;
    pub const ELMM: u64 = 0x454c_4d4d_2020_0005;
    pub const HEDGE: u64 = 0x4845_4447_4520_0006;
    pub const VALIDATE: u64 = 0x5641_4c49_4420_0007;
    pub const MARKOV_OUTER: u64 = 0x4d4b_4f56_4f55_0008;
    pub const MARKOV_INNER: u64 = 0x4d4b_4f56_494e_0009;
    pub const REPLICATE: u64 = 0x5245_504c_4943_000a;
    pub const CHECK: u64 = 0x4348_4543_4b20_000b;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for one logical stream.
///
/// The 256-bit key is expanded from `(seed, purpose)`; the ChaCha stream id
/// then separates up to 2^64 parallel streams under that key.
pub fn stream_rng(seed: u64, purpose: u64, stream: u64) -> ChaCha8Rng {
    let mut state = splitmix64(seed ^ splitmix64(purpose));
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream);
    rng
}
