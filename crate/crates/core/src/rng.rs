//! Deterministic random streams.
//!
//! Every replica draws from ChaCha8 keyed by the master seed, with the
//! replica index as the 64-bit stream id. Stream `r` never depends on how
//! many other streams exist, so replica counts can change freely.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Rng = ChaCha8Rng;

/// Random stream `stream` derived from `master`.
pub fn stream(master: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng
}

/// Sub-stream for nested splitting: `(master, a, b)` maps to a fresh master
/// seed by SplitMix64 mixing, then to stream `b`.
pub fn substream(master: u64, a: u64, b: u64) -> Rng {
    stream(splitmix64(master ^ splitmix64(a.wrapping_add(0x9E37_79B9_7F4A_7C15))), b)
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
pub fn uniform(rng: &mut Rng) -> f64 {
    rand::Rng::random::<f64>(rng)
}
