#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scorelab::DiscreteMeasure;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> DiscreteMeasure {
    let coords = (0..n * dim)
        .map(|_| scale * scorelab::rng::normal(rng))
        .collect::<Vec<f64>>();
    DiscreteMeasure::uniform_flat(dim, coords).unwrap()
}

pub fn unit_cube_cloud(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DiscreteMeasure {
    let coords = (0..n * dim).map(|_| rng.random::<f64>()).collect::<Vec<f64>>();
    DiscreteMeasure::uniform_flat(dim, coords).unwrap()
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / s).collect()
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> Vec<f64> {
    (0..dim).map(|_| scale * scorelab::rng::normal(rng)).collect()
}
