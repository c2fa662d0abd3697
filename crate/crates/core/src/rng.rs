//! Seeded randomness. Every random draw in the crate goes through ChaCha8,
//! whose output stream is fixed across platforms, keyed by `(seed, stream)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Real, Tensor};

pub type SeededRng = ChaCha8Rng;

/// Named streams so that adding a draw in one stage does not shift another.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const DROPOUT: u64 = 3;
    pub const MEMORY: u64 = 4;
    pub const NEIGHBORHOOD: u64 = 5;
    pub const SYNTHETIC: u64 = 6;
    pub const PHASE2_SHUFFLE: u64 = 7;
}

pub fn seeded(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn uniform<R: Real>(rng: &mut SeededRng, shape: &[usize], radius: f64) -> Tensor<R> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| R::of(rng.random_range(-radius..=radius))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

pub fn normal<R: Real>(rng: &mut SeededRng, shape: &[usize], std: f64) -> Tensor<R> {
    let n: usize = shape.iter().product();
    let dist = Normal::new(0.0, std).expect("finite std");
    let data = (0..n).map(|_| R::of(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape product matches")
}

/// Mix a seed with sub-keys (SplitMix64 finalizer) to key per-item generators
/// independently of scheduling order.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

/// Fisher-Yates shuffle of `0..n`.
pub fn permutation(rng: &mut SeededRng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    idx
}
