//! Fixtures shared by the benchmarks.

use bmim_core::Dataset;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform exposures on [-1, 1] with a smooth outcome in the first two.
pub fn dataset(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
    let y = Array1::from_shape_fn(n, |i| (x[[i, 0]] + 0.5 * x[[i, 1]]).tanh() + 0.2 * rng.random::<f64>());
    let names = (1..=p).map(|j| format!("x{j}")).collect();
    Dataset::with_intercept(y, x, Array2::zeros((n, 0)), names, vec![]).expect("shapes agree")
}
