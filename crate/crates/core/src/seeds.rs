//! Seeded random fields used as solver starting points.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::grid::{ComplexField, Grid};

/// Reproducible generator for a given seed and stream (restart index).
pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Independent standard complex normal values on the active nodes.
pub fn random_field(grid: &Grid, seed: u64) -> ComplexField {
    random_field_stream(grid, seed, 0)
}

pub fn random_field_stream(grid: &Grid, seed: u64, stream: u64) -> ComplexField {
    let mut r = rng(seed, stream);
    let values = (0..grid.node_count())
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut r);
            let b: f64 = StandardNormal.sample(&mut r);
            Complex64::new(a, b)
        })
        .collect();
    ComplexField::from_values(*grid, values).expect("length matches grid")
}

/// Random phases `chi_p` uniform in `[-pi, pi)`.
pub fn random_gauge(len: usize, seed: u64) -> Vec<f64> {
    use rand::Rng;
    let mut r = rng(seed, 7);
    (0..len)
        .map(|_| r.gen_range(-std::f64::consts::PI..std::f64::consts::PI))
        .collect()
}
