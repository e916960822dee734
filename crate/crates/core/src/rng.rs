//! Seeded, stream-split random number generation.
//!
//! Every stochastic component takes an explicit generator. Independent
//! streams are derived from a `(seed, key...)` tuple so that parallel
//! workers reproduce the same draws regardless of scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Generator for stream `stream` of master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator keyed by a master seed and an arbitrary tuple of indices.
pub fn keyed(seed: u64, key: &[u64]) -> Rng {
    stream(seed, stream_id(key))
}

/// Folds a key tuple into a single 64-bit stream id (splitmix64 mixing).
pub fn stream_id(key: &[u64]) -> u64 {
    let mut h: u64 = 0x243f_6a88_85a3_08d3;
    for &k in key {
        h ^= splitmix(k.wrapping_add(h));
        h = h.rotate_left(27).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    }
    splitmix(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Inverse-CDF draw from a discrete distribution.
pub fn sample_categorical<R: rand::Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc {
            return i;
        }
    }
    last_positive
}
