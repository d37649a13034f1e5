#![allow(dead_code)]

use optiforest::DataMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const SYNTH_DIM: usize = 4;
pub const SYNTH_INLIERS: usize = 500;
pub const SYNTH_OUTLIERS: usize = 10;

/// 500 draws from N(0, I_4) followed by 10 outliers drawn uniformly from
/// the box [-8, 8]^4 and kept only if their norm is at least 5.
pub fn gaussian_with_outliers(seed: u64) -> DataMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(SYNTH_INLIERS + SYNTH_OUTLIERS);
    for _ in 0..SYNTH_INLIERS {
        rows.push((0..SYNTH_DIM).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>());
    }
    while rows.len() < SYNTH_INLIERS + SYNTH_OUTLIERS {
        let x: Vec<f64> = (0..SYNTH_DIM).map(|_| rng.random_range(-8.0..8.0)).collect();
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() >= 5.0 {
            rows.push(x);
        }
    }
    let labels = (0..rows.len()).map(|i| u8::from(i >= SYNTH_INLIERS)).collect();
    DataMatrix::from_rows(&rows, Some(labels)).unwrap()
}
