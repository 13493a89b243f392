//! Seeded inputs shared by the benchmarks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// An `n x (p + 1)` design with an intercept column and a response that
/// depends on every other column.
pub fn regression_problem(n: usize, p: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = DMatrix::from_fn(n, p + 1, |_, j| if j == 0 { 1.0 } else { rng.random_range(-1.0..1.0) });
    let beta = DVector::from_fn(p + 1, |j, _| 1.0 / (1.0 + j as f64));
    let noise = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    let y = &x * beta + noise;
    (x, y)
}

/// Subject and item labels for a crossed design of `n` rows.
pub fn crossed_labels(n: usize, subjects: usize, items: usize) -> (Vec<String>, Vec<String>) {
    let s = (0..n).map(|i| format!("s{}", i % subjects)).collect();
    let it = (0..n).map(|i| format!("i{}", (i / subjects) % items)).collect();
    (s, it)
}
