//! Seeded random streams.
//!
//! A run owns two ChaCha8 streams derived from one seed: stream 0 feeds
//! consequence draws and stream 1 feeds tie-breaking. Keeping them apart means
//! a change in tie-breaking never shifts the consequence sequence.
//!
//! Standard normals come from Box–Muller. Each pair consumes two 64-bit words
//! `a` then `b`; with `u1 = (a >> 11 + 1) / 2^53` in (0, 1] and
//! `u2 = (b >> 11) / 2^53` in [0, 1), the pair is
//! `r cos(2π u2), r sin(2π u2)` where `r = sqrt(-2 ln u1)`. A vector of length
//! `d` uses `ceil(d / 2)` pairs, filling coordinates in order; an odd trailing
//! sine value is discarded.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TWO_POW_53: f64 = 9_007_199_254_740_992.0;

/// A reproducible random source.
#[derive(Clone, Debug)]
pub struct RandomState {
    inner: ChaCha8Rng,
}

impl RandomState {
    /// Stream `stream` of the generator keyed by `seed`.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / TWO_POW_53
    }

    /// Uniform in (0, 1].
    pub fn uniform_open0(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / TWO_POW_53
    }

    /// Uniform integer in `0..n` (n > 0), by rejection to avoid modulo bias.
    pub fn below(&mut self, n: usize) -> usize {
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// One Box–Muller pair.
    pub fn normal_pair(&mut self) -> (f64, f64) {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let phase = 2.0 * std::f64::consts::PI * u2;
        (r * phase.cos(), r * phase.sin())
    }

    /// `d` independent standard normals.
    pub fn normals(&mut self, d: usize, out: &mut Vec<f64>) {
        out.clear();
        while out.len() < d {
            let (a, b) = self.normal_pair();
            out.push(a);
            if out.len() < d {
                out.push(b);
            }
        }
    }

    /// Fisher–Yates shuffle of `items`.
    pub fn shuffle<V>(&mut self, items: &mut [V]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// A point drawn uniformly from the probability simplex of dimension `n`.
    pub fn simplex_point(&mut self, n: usize) -> Vec<f64> {
        let mut e: Vec<f64> = (0..n).map(|_| -self.uniform_open0().ln()).collect();
        let total: f64 = e.iter().sum();
        e.iter_mut().for_each(|v| *v /= total);
        e
    }
}

/// The two streams of one simulated run.
#[derive(Clone, Debug)]
pub struct Streams {
    pub consequences: RandomState,
    pub ties: RandomState,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            consequences: RandomState::new(seed, 0),
            ties: RandomState::new(seed, 1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = Streams::new(7);
        let mut b = Streams::new(7);
        let xs: Vec<u64> = (0..5).map(|_| a.consequences.next_u64()).collect();
        let ys: Vec<u64> = (0..5).map(|_| b.consequences.next_u64()).collect();
        assert_eq!(xs, ys);
        let zs: Vec<u64> = (0..5).map(|_| a.ties.next_u64()).collect();
        assert_ne!(xs, zs);
    }

    #[test]
    fn uniform_ranges() {
        let mut r = RandomState::new(1, 0);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            let v = r.uniform_open0();
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn normal_consumption_order() {
        let mut a = RandomState::new(3, 0);
        let mut b = RandomState::new(3, 0);
        let mut v = Vec::new();
        a.normals(3, &mut v);
        let (p0, p1) = b.normal_pair();
        let (p2, _) = b.normal_pair();
        assert_eq!(v, vec![p0, p1, p2]);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut r = RandomState::new(11, 0);
        let n = 200_000;
        let mut v = Vec::new();
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n / 2 {
            r.normals(2, &mut v);
            for x in &v {
                s += x;
                s2 += x * x;
            }
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn below_is_in_range_and_roughly_uniform() {
        let mut r = RandomState::new(5, 1);
        let mut counts = [0usize; 3];
        for _ in 0..30_000 {
            counts[r.below(3)] += 1;
        }
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.02);
        }
    }
}
