//! Seeded random number generation.
//!
//! Every randomized routine in the crate takes an explicit [`Rng`] so that a
//! fixed seed reproduces bit-identical results, including across parallel
//! dataset generation (each frame derives its own independent stream).

use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Deterministic random generator. Same seed, same value stream.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            state: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Derive an independent stream for a substream index (e.g. a frame).
    /// Mixing through splitmix64 decorrelates neighboring indices.
    pub fn derive(base_seed: u64, stream: u64) -> Self {
        Rng::new(splitmix64(base_seed ^ splitmix64(stream)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.state.gen_range(lo..hi)
    }

    pub fn uniform_usize(&mut self, lo: usize, hi_inclusive: usize) -> usize {
        self.state.gen_range(lo..=hi_inclusive)
    }

    /// Draw from a zero-mean normal with the given standard deviation.
    pub fn normal(&mut self, std_dev: f64) -> f64 {
        if std_dev == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, std_dev).unwrap().sample(&mut self.state)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        // Fisher-Yates, high-to-low, so the draw count is fixed by length.
        for i in (1..items.len()).rev() {
            let j = self.state.gen_range(0..=i);
            items.swap(i, j);
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}
