//! Seed derivation: one ChaCha stream per (seed, purpose, index), so
//! frames can be generated in any order and changing one purpose's draws
//! never shifts another's.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Regime = 1,
    Background = 2,
    Scene = 3,
    Detector = 4,
    Derive = 5,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn mix(seed: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(purpose as u64)) ^ index)
}

pub fn stream_rng(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, purpose, index))
}

/// Child seed for a named consumer (for example the teacher detector).
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    label.bytes().fold(mix(seed, Purpose::Derive, 0), |acc, b| splitmix64(acc ^ u64::from(b)))
}

/// Smallest `k` with `P(X <= k) >= u` for `X ~ Poisson(lambda)`; monotone in
/// both `lambda` and `u`, so a shared uniform couples counts across rates.
pub fn poisson_from_uniform(lambda: f64, u: f64) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let mut p = (-lambda).exp();
    let mut cdf = p;
    let mut k = 0usize;
    while u > cdf && k < 10_000 {
        k += 1;
        p *= lambda / k as f64;
        cdf += p;
        if p == 0.0 && cdf < u {
            break;
        }
    }
    k
}
