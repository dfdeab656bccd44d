//! Seeded generator streams.
//!
//! Every stochastic routine takes a caller-owned generator. Parallel work
//! derives one independent stream per work item from `(seed, stream)` so
//! results do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type GsdmRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> GsdmRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` under master seed `seed`.
pub fn stream(seed: u64, stream: u64) -> GsdmRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Two-level stream, e.g. `(purpose, index)`.
pub fn substream(seed: u64, a: u64, b: u64) -> GsdmRng {
    let mixed = a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b;
    stream(seed, mixed)
}

#[inline]
pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
