//! Seedable randomness with named sub-streams.
//!
//! All randomness in the crate flows from a single root seed. Independent
//! consumers (key generation, mask sampling, noise sampling, per-trial
//! workloads) draw from named streams so that paired experiments can replay
//! identical randomness on different arithmetic paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Derives a deterministic PRNG for `(seed, name)`.
pub fn stream(seed: u64, name: &str) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

/// Derives a per-trial PRNG, so trials can run in any order (or in
/// parallel) with identical results.
pub fn trial_stream(seed: u64, name: &str, trial: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ trial.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    rng.set_stream(fnv1a(name.as_bytes()));
    rng
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Standard-normal sampler (Box-Muller).
///
/// Deliberately not the ziggurat sampler from `rand_distr`: Box-Muller
/// consumes a fixed number of uniforms per pair, which keeps noise
/// experiments reproducible across versions.
#[derive(Default)]
pub struct GaussianSampler {
    spare: Option<f64>,
}

impl GaussianSampler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sample<R: Rng>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] so the log is finite.
        let u1: f64 = 1.0 - rng.gen::<f64>();
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }
}
