//! Deterministic derivation of independent random streams.
//!
//! Every stochastic block (a replicate update at an iteration, a simulated
//! dataset, a Monte Carlo batch) draws from its own ChaCha8 stream keyed by
//! the run seed and a tuple of tags, so results never depend on scheduling
//! order and a resumed chain replays exactly the same streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for `seed` and the given tag path.
pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    let mut key = [0u8; 32];
    let mut h = splitmix64(seed);
    for (i, &t) in tags.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(t.wrapping_add((i as u64 + 1) << 56)));
    }
    for chunk in key.chunks_mut(8) {
        h = splitmix64(h);
        chunk.copy_from_slice(&h.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
