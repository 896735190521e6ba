//! Fixtures shared by the benchmarks.

use codsa_core::dataset::Dataset;
use codsa_core::dgp::{carve_balanced_eval, gen_classification, gen_regression, ClassifSimConfig, RegressSimConfig};
use codsa_core::rng::SeedStream;
use ndarray::Array2;

/// Training part of a classification replicate at the study's sizes.
pub fn classification_train(seed: u64) -> Dataset {
    let d = gen_classification(&ClassifSimConfig { n1: 1400, n2: 3800, seed }).expect("simulation");
    carve_balanced_eval(&d, 200, 400, SeedStream::new(seed)).expect("carving").train
}

pub fn regression_train(seed: u64) -> Dataset {
    let d = gen_regression(&RegressSimConfig { n1: 1400, n2: 3800, sigma: 0.2, seed }).expect("simulation");
    carve_balanced_eval(&d, 200, 400, SeedStream::new(seed)).expect("carving").train
}

/// Standard-normal-ish latents (a deterministic lattice) with alternating regions.
pub fn latents(n: usize, dim: usize) -> (Array2<f64>, Vec<usize>) {
    let z = Array2::from_shape_fn((n, dim), |(i, j)| ((i * 7919 + j * 104_729) % 1000) as f64 / 250.0 - 2.0);
    let regions = (0..n).map(|i| 1 + i % 2).collect();
    (z, regions)
}
