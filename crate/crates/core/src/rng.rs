//! Seeded randomness: stream derivation and standard-normal draws.
//!
//! All stochastic stages (weight init, batch shuffles, latent sampling,
//! synthetic data) run on ChaCha20 streams derived from a single master
//! seed, so every number in a run is a pure function of the configured
//! seed. Normal draws use Box-Muller rather than a library sampler so the
//! draw sequence is pinned by this crate alone.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Stream tags for the independent random streams hanging off one run seed.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const FLOW_INIT: u64 = 2;
    pub const K_SELECTION: u64 = 3;
    pub const CALIBRATION: u64 = 4;
    pub const TEST: u64 = 5;
    pub const QUANTILE_NET: u64 = 6;
    pub const TRAIN_SHUFFLE: u64 = 7;
    /// select_k internal: selection-calibration point sampling.
    pub const SELECTION_CAL: u64 = 8;
    /// select_k internal: size-evaluation point sampling.
    pub const SIZE_EVAL: u64 = 9;
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for (master seed, stream tag, index).
///
/// Distinct (stream, index) pairs yield statistically independent streams;
/// the same triple always yields the same seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(stream));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Uniform in [0, 1) with 53 random bits.
#[inline]
pub fn unit_uniform(rng: &mut ChaCha20Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in (0, 1]; safe as a log argument.
#[inline]
fn unit_uniform_open(rng: &mut ChaCha20Rng) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// One Box-Muller pair of independent standard normals.
#[inline]
pub fn normal_pair(rng: &mut ChaCha20Rng) -> (f64, f64) {
    let u1 = unit_uniform_open(rng);
    let u2 = unit_uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = std::f64::consts::TAU * u2;
    (r * theta.cos(), r * theta.sin())
}

/// `dim` independent standard normals. Each call consumes whole Box-Muller
/// pairs; an odd trailing draw is discarded, never cached across calls.
pub fn standard_normal_vector(rng: &mut ChaCha20Rng, dim: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(dim);
    while out.len() < dim {
        let (a, b) = normal_pair(rng);
        out.push(a);
        if out.len() < dim {
            out.push(b);
        }
    }
    out
}
