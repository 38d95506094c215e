//! Shared fixtures for the benchmarks.

use lsapc::{Dataset, RngHandle};
use nalgebra::{DMatrix, DVector};

/// Gaussian design with a piecewise-constant truth and unit noise.
pub fn fixture(n: usize, p: usize, seed: u64) -> Dataset {
    let mut rng = RngHandle::new(seed);
    let x = DMatrix::from_fn(n, p, |_, _| rng.standard_normal());
    let beta = DVector::from_fn(p, |i, _| if (p / 3..p / 2).contains(&i) { 2.0 } else { 0.0 });
    let y = &x * beta + DVector::from_fn(n, |_, _| rng.standard_normal());
    Dataset::new(y, x).expect("fixture is valid")
}
