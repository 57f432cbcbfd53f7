//! Keyed random streams.
//!
//! Every Gaussian increment is a pure function of
//! `(master_seed, domain, realization, particle, step)`: the first three key a
//! ChaCha8 generator, the particle selects one of its 2^64 streams, and the step
//! fixes the word position because each step consumes a constant number of
//! words (Box–Muller, two uniforms per pair of normals). Results therefore do
//! not depend on how realizations are scheduled across threads.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Independent purposes that must never share a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Noise = 0,
    Init = 1,
    CloudNoise = 2,
    CloudInit = 3,
    Resample = 4,
    Fuzz = 5,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngPolicy {
    pub master_seed: u64,
}

impl RngPolicy {
    pub fn new(master_seed: u64) -> Self {
        RngPolicy { master_seed }
    }

    pub fn stream(&self, domain: Domain, realization: u64, particle: u64) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&realization.to_le_bytes());
        seed[16..24].copy_from_slice(&(domain as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(particle);
        rng
    }

    pub fn gaussian(&self, domain: Domain, realization: u64, particle: u64) -> GaussianStream {
        GaussianStream::new(self.stream(domain, realization, particle))
    }

    /// Brownian increments `dW` (variance `dt` per coordinate) of one particle at one step,
    /// computed by seeking directly to the step's word position.
    pub fn increment_at(
        &self,
        realization: u64,
        particle: u64,
        step: usize,
        d_prime: usize,
        dt: f64,
    ) -> Vec<f64> {
        let mut rng = self.stream(Domain::Noise, realization, particle);
        rng.set_word_pos(words_per_block(d_prime) as u128 * step as u128);
        let mut g = GaussianStream::new(rng);
        let mut out = vec![0.0; d_prime];
        g.fill_block(&mut out, dt.sqrt());
        out
    }
}

/// u32 words consumed by one block of `len` normals.
pub fn words_per_block(len: usize) -> u64 {
    // pairs * 2 uniforms * 2 words
    len.div_ceil(2) as u64 * 4
}

/// Standard normals drawn by Box–Muller with a fixed word budget per block.
#[derive(Clone, Debug)]
pub struct GaussianStream {
    rng: ChaCha8Rng,
}

impl GaussianStream {
    pub fn new(rng: ChaCha8Rng) -> Self {
        GaussianStream { rng }
    }

    #[inline]
    fn uniform(&mut self) -> f64 {
        // 53 random bits in [0, 1)
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn pair(&mut self) -> (f64, f64) {
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        (r * c, r * s)
    }

    /// Fills `out` with `scale * N(0,1)` draws. An odd tail discards the second normal
    /// of its pair so that every block costs `words_per_block(out.len())` words.
    #[inline]
    pub fn fill_block(&mut self, out: &mut [f64], scale: f64) {
        let mut chunks = out.chunks_exact_mut(2);
        for pair in &mut chunks {
            let (a, b) = self.pair();
            pair[0] = scale * a;
            pair[1] = scale * b;
        }
        if let [last] = chunks.into_remainder() {
            *last = scale * self.pair().0;
        }
    }

    pub fn next_normal_pair(&mut self) -> (f64, f64) {
        self.pair()
    }

    /// Uniform index in `0..n` (for resampling).
    pub fn index(&mut self, n: usize) -> usize {
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn next_uniform(&mut self) -> f64 {
        self.uniform()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequential_and_random_access_agree() {
        let policy = RngPolicy::new(7);
        for d_prime in [1usize, 2, 3] {
            let mut g = policy.gaussian(Domain::Noise, 3, 5);
            let dt: f64 = 0.01;
            for step in 0..40 {
                let mut seq = vec![0.0; d_prime];
                g.fill_block(&mut seq, dt.sqrt());
                let direct = policy.increment_at(3, 5, step, d_prime, dt);
                assert_eq!(seq, direct, "d'={d_prime} step={step}");
            }
        }
    }

    #[test]
    fn keys_separate_streams() {
        let p = RngPolicy::new(1);
        let a = p.increment_at(0, 0, 0, 2, 1.0);
        assert_ne!(a, p.increment_at(1, 0, 0, 2, 1.0));
        assert_ne!(a, p.increment_at(0, 1, 0, 2, 1.0));
        assert_ne!(a, RngPolicy::new(2).increment_at(0, 0, 0, 2, 1.0));
        let mut init = p.gaussian(Domain::Init, 0, 0);
        let mut x = [0.0; 2];
        init.fill_block(&mut x, 1.0);
        assert_ne!(a, x.to_vec());
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut g = RngPolicy::new(11).gaussian(Domain::Fuzz, 0, 0);
        let n = 200_000;
        let mut buf = [0.0; 2];
        let (mut s1, mut s2, mut s4) = (0.0, 0.0, 0.0);
        for _ in 0..n / 2 {
            g.fill_block(&mut buf, 1.0);
            for v in buf {
                s1 += v;
                s2 += v * v;
                s4 += v * v * v * v;
            }
        }
        let nf = n as f64;
        assert!((s1 / nf).abs() < 4.0 / nf.sqrt());
        assert!((s2 / nf - 1.0).abs() < 4.0 * 2f64.sqrt() / nf.sqrt());
        assert!((s4 / nf - 3.0).abs() < 4.0 * 96f64.sqrt() / nf.sqrt());
    }
}
