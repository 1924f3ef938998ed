//! Seeded random generation.
//!
//! Every random draw in the crate goes through a ChaCha8 stream (a
//! counter-based generator: the stream position is a 64-bit block counter, so
//! runs are bit-reproducible for a given seed) and the Ziggurat transform of
//! `rand_distr::StandardNormal` for Gaussians.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::scalar::Real;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian<T: Real>(rng: &mut SeededRng, std: f64) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::lit(std * z)
}

pub fn gaussian_vector<T: Real>(rng: &mut SeededRng, len: usize, std: f64) -> DVector<T> {
    DVector::from_fn(len, |_, _| gaussian(rng, std))
}

/// Entries drawn in row-major order.
pub fn gaussian_matrix<T: Real>(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> DMatrix<T> {
    let data: Vec<T> = (0..rows * cols).map(|_| gaussian(rng, std)).collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

pub fn uniform<T: Real>(rng: &mut SeededRng, lo: f64, hi: f64) -> T {
    T::lit(rng.random_range(lo..hi))
}

/// `count` distinct cells of an `n × m` grid, chosen uniformly, sorted row-major.
pub fn sample_cells(rng: &mut SeededRng, n: usize, m: usize, count: usize) -> Vec<(usize, usize)> {
    let mut all: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).collect();
    all.shuffle(rng);
    all.truncate(count.min(n * m));
    all.sort_unstable();
    all
}
