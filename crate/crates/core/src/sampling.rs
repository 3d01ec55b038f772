//! Seeded shot sampling.
//!
//! Random streams are keyed by `(seed, index)` only: ChaCha8 seeded from the
//! global seed, with the point index selecting the stream. A point therefore
//! draws the same numbers no matter which worker evaluates it or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

/// Independent RNG for one scan point.
pub fn point_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// How populations are read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sampling {
    /// Infinite-shot expectation values.
    Exact,
    /// Binomial projection noise with this many shots per point.
    Shots(u32),
}

impl Sampling {
    /// Measured excitation fraction for true population `p`.
    pub fn measure(self, p: f64, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Sampling::Exact => p.clamp(0.0, 1.0),
            Sampling::Shots(n) => sample_fraction(p, n, rng),
        }
    }

    /// Largest projection-noise standard error of one point, `0.5/√n`.
    pub fn noise_floor(self) -> f64 {
        match self {
            Sampling::Exact => 0.0,
            Sampling::Shots(n) => 0.5 / f64::from(n.max(1)).sqrt(),
        }
    }
}

/// Binomial draw of `shots` trials at probability `p`, as a fraction.
pub fn sample_fraction<R: rand::Rng + ?Sized>(p: f64, shots: u32, rng: &mut R) -> f64 {
    sample_counts(p, shots, rng) as f64 / f64::from(shots.max(1))
}

pub fn sample_counts<R: rand::Rng + ?Sized>(p: f64, shots: u32, rng: &mut R) -> u64 {
    if shots == 0 {
        return 0;
    }
    let p = p.clamp(0.0, 1.0);
    // p is clamped, so construction cannot fail.
    Binomial::new(u64::from(shots), p).map(|b| b.sample(rng)).unwrap_or(0)
}

/// Standard error of a binomial fraction.
pub fn binomial_stderr(p: f64, shots: u32) -> f64 {
    let p = p.clamp(0.0, 1.0);
    (p * (1.0 - p) / f64::from(shots.max(1))).sqrt()
}
