//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream addressed by a
//! `(seed, stream)` pair, so results do not depend on thread scheduling or on
//! how many other streams were consumed before.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

/// Latent-state shocks `w_t`.
pub const STREAM_STATE_SHOCKS: u64 = 1;
/// Measurement errors `v_t`.
pub const STREAM_MEASUREMENT: u64 = 2;
/// Fundamental shocks of a moving-average panel.
pub const STREAM_MA_SHOCKS: u64 = 3;
/// Metropolis-Hastings proposals and acceptance draws.
pub const STREAM_MCMC: u64 = 4;
/// Randomly generated model matrices (e.g. Gaussian loadings in model files).
pub const STREAM_MATRIX: u64 = 5;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finaliser; used to derive child seeds from a master seed.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed number `index` of `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ mix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn fill_standard_normal<R: rand::Rng>(rng: &mut R, out: &mut [f64]) {
    for x in out.iter_mut() {
        *x = StandardNormal.sample(rng);
    }
}
