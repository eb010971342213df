//! Counter-based standard normal draws.
//!
//! The draws for step `t` are a pure function of `(seed, t)`: the ChaCha
//! keystream is positioned at word `4 t` and two 64-bit words are turned into
//! a pair of normals by the Box-Muller transform.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

const WORDS_PER_DRAW: u128 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseState {
    pub seed: u64,
    pub counter: u64,
}

impl NoiseState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Pair of independent standard normals at the current counter, then
    /// advance the counter.
    pub fn next_pair(&mut self) -> (f64, f64) {
        let pair = normal_pair(self.seed, self.counter);
        self.counter += 1;
        pair
    }
}

/// The two standard normals assigned to draw index `counter` of `seed`.
pub fn normal_pair(seed: u64, counter: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_word_pos(counter as u128 * WORDS_PER_DRAW);
    let a = rng.next_u64();
    let b = rng.next_u64();
    // u1 in (0, 1], u2 in [0, 1)
    let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    let radius = (-2.0 * u1.ln()).sqrt();
    let angle = std::f64::consts::TAU * u2;
    (radius * angle.cos(), radius * angle.sin())
}

/// SplitMix64 finalizer; used to derive independent seeds from a run seed.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}
