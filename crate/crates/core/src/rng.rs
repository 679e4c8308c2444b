//! Seeded pseudo-random streams.
//!
//! Every random quantity in the crate comes from xoshiro256** seeded through
//! SplitMix64 (`seed_from_u64`). Uniform variates take the top 53 bits of one
//! 64-bit output, so a stream is reproducible by any implementation of the
//! same generator.

use rand::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

/// The generator used for problem generation, tuning and sampling.
pub type Prng = rand_xoshiro::Xoshiro256StarStar;

pub fn prng(seed: u64) -> Prng {
    Prng::seed_from_u64(seed)
}

/// Uniform draw on `[0, 1)` from the top 53 bits of the next output.
#[inline]
pub fn uniform(rng: &mut Prng) -> f64 {
    const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
    (rng.next_u64() >> 11) as f64 * SCALE
}

/// Standard normal draw (ziggurat).
#[inline]
pub fn standard_normal(rng: &mut Prng) -> f64 {
    StandardNormal.sample(rng)
}
