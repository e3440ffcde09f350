//! Counter-based random streams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(master seed, domain)` and selected by a 64-bit stream index (usually a
//! replica number). ChaCha is itself a counter-mode generator, so the stream
//! for replica `i` is reachable in O(1) and independent of how replicas are
//! distributed over threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Separates the uses of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Field = 1,
    Walk = 2,
    EnvWalk = 3,
    EnvInit = 4,
    EnvDynamics = 5,
    WhiteNoise = 6,
    Realization = 7,
    Bootstrap = 8,
    Label = 9,
    Coupling = 10,
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The stream `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}

/// Derive a child seed, e.g. the environment seed of realization `index`.
pub fn child_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain as u64)).wrapping_add(index))
}

/// Uniform in the open interval (0, 1).
#[inline]
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Exponential holding time by inverse CDF.
#[inline]
pub fn exponential<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> f64 {
    -open01(rng).ln() / rate
}
