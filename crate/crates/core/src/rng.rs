//! Random streams.
//!
//! Every stochastic quantity in the crate is drawn from a ChaCha8 stream
//! seeded through [`derive_seed`]. Standard normals use the Ziggurat
//! sampler of `rand_distr::StandardNormal`; nothing else draws Gaussians, so
//! reruns with the same seeds reproduce bit for bit on any platform with
//! IEEE-754 doubles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for sub-stream `index` of `base`. Independent of evaluation
/// order, so parallel and serial loops agree.
#[inline]
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix64(mix64(base) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}

pub fn stream(seed: u64) -> Stream {
    ChaCha8Rng::seed_from_u64(seed)
}

#[inline]
pub fn std_normal(rng: &mut Stream) -> f64 {
    StandardNormal.sample(rng)
}
