//! Seeding helpers. Every random stream in a run is derived from one seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::Matrix;

pub type RunRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mixes a base seed with a stream tag and an index (e.g. step or batch).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(seed: u64, stream: u64, index: u64) -> RunRng {
    rng_from_seed(derive_seed(seed, stream, index))
}

/// iid N(0, σ²) entries.
pub fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, sigma: f64, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Matrix::from_raw(rows, cols, data)
}
