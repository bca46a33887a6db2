//! Deterministic inputs shared by the benchmarks.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vrmsi_core::learn::Volume;
use vrmsi_core::{ComplexImage, Domain};

pub fn random_complex(rows: usize, cols: usize, domain: Domain, seed: u64) -> ComplexImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols)
        .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    ComplexImage::from_vec(rows, cols, data, domain).expect("shape")
}

pub fn random_volume(channels: usize, rows: usize, cols: usize, seed: u64) -> Volume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Volume {
        channels,
        rows,
        cols,
        data: (0..channels * rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    }
}
