//! Seeded random streams.
//!
//! Every parallelizable unit of work (a trajectory, a rollout, an episode)
//! draws from its own stream derived from a root seed and an index path, so
//! results never depend on scheduling order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Domain tags for stream derivation.
pub mod tag {
    pub const DATASET: u64 = 0x01;
    pub const SAS_LOOP1: u64 = 0x11;
    pub const SAS_LOOP2: u64 = 0x12;
    pub const MAXMAX: u64 = 0x13;
    pub const RANDOM_PROMPT: u64 = 0x14;
    pub const DEPLOY: u64 = 0x21;
    pub const ESCAPE: u64 = 0x31;
    pub const SKILL: u64 = 0x41;
    pub const EVAL: u64 = 0x51;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent stream from `seed` and an index path.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    let mut h = splitmix64(seed);
    for &p in path {
        h = splitmix64(h ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Uniform draw in `[0, 1)`.
#[inline]
pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}

/// Uniform integer in `0..n`; `n` must be positive.
#[inline]
pub fn below<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Samples an index proportionally to non-negative `weights`.
///
/// Zero-weight entries are never returned; `None` when every weight is zero.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().filter(|w| **w > 0.0).sum();
    if total <= 0.0 {
        return None;
    }
    let u = uniform(rng) * total;
    let mut acc = 0.0;
    let mut last = None;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = Some(i);
        if u < acc {
            return Some(i);
        }
    }
    last
}
