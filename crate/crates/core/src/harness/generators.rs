//! Synthetic data with known intrinsic dimension.
//!
//! Embedded generators place their intrinsic coordinates in the first
//! components of R^D and apply a fixed orthogonal map drawn from
//! `rotation_seed`. The sample seed only drives the intrinsic coordinates,
//! so two embeddings of the same generator differ by an isometry.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{fill_normal, seeded};
use crate::{invalid, DiscreteMeasure, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeneratorSpec {
    /// n copies of one location (the origin by default).
    Point {
        dim: usize,
        #[serde(default)]
        location: Option<Vec<f64>>,
    },
    /// Uniform over a finite list of locations.
    Atoms { locations: Vec<Vec<f64>> },
    /// Uniform on [0,1]^d, rotated into R^D.
    SubspaceUniform {
        d: usize,
        dim: usize,
        #[serde(default)]
        rotation_seed: u64,
    },
    /// Uniform on the unit circle, rotated into R^D.
    Circle {
        dim: usize,
        #[serde(default)]
        rotation_seed: u64,
    },
    /// Uniform on the product of d unit circles, rotated into R^D (D ≥ 2d).
    Torus {
        d: usize,
        dim: usize,
        #[serde(default)]
        rotation_seed: u64,
    },
    /// Uniform direction, radius with P(|X| > r) = r^{−q_tail} for r ≥ 1.
    ParetoTail { q_tail: f64, dim: usize },
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Torus {
            d: 4,
            dim: 8,
            rotation_seed: 0,
        }
    }
}

impl GeneratorSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GeneratorSpec::Point { dim, location } => {
                if *dim == 0 {
                    return invalid("point generator needs dim >= 1");
                }
                if let Some(x) = location {
                    if x.len() != *dim {
                        return invalid(format!("location has {} coordinates, dim is {dim}", x.len()));
                    }
                }
            }
            GeneratorSpec::Atoms { locations } => {
                if locations.is_empty() || locations[0].is_empty() {
                    return invalid("atoms generator needs at least one nonempty location");
                }
                if locations.iter().any(|x| x.len() != locations[0].len()) {
                    return invalid("atom locations differ in dimension");
                }
            }
            GeneratorSpec::SubspaceUniform { d, dim, .. } => {
                if *d == 0 || d > dim {
                    return invalid(format!("subspace needs 1 <= d <= D, got d = {d}, D = {dim}"));
                }
            }
            GeneratorSpec::Circle { dim, .. } => {
                if *dim < 2 {
                    return invalid("circle needs D >= 2");
                }
            }
            GeneratorSpec::Torus { d, dim, .. } => {
                if *d == 0 || 2 * d > *dim {
                    return invalid(format!("torus needs 1 <= d and 2d <= D, got d = {d}, D = {dim}"));
                }
            }
            GeneratorSpec::ParetoTail { q_tail, dim } => {
                if !(*q_tail > 0.0) || *dim == 0 {
                    return invalid("pareto tail needs q_tail > 0 and dim >= 1");
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            GeneratorSpec::Point { dim, .. }
            | GeneratorSpec::SubspaceUniform { dim, .. }
            | GeneratorSpec::Circle { dim, .. }
            | GeneratorSpec::Torus { dim, .. }
            | GeneratorSpec::ParetoTail { dim, .. } => *dim,
            GeneratorSpec::Atoms { locations } => locations[0].len(),
        }
    }

    /// Dimension of the support; `None` for full-dimensional laws.
    pub fn intrinsic_dim(&self) -> Option<f64> {
        match self {
            GeneratorSpec::Point { .. } | GeneratorSpec::Atoms { .. } => Some(0.0),
            GeneratorSpec::SubspaceUniform { d, .. } | GeneratorSpec::Torus { d, .. } => Some(*d as f64),
            GeneratorSpec::Circle { .. } => Some(1.0),
            GeneratorSpec::ParetoTail { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            GeneratorSpec::Point { dim, .. } => format!("point(D={dim})"),
            GeneratorSpec::Atoms { locations } => format!("atoms(k={},D={})", locations.len(), self.dim()),
            GeneratorSpec::SubspaceUniform { d, dim, .. } => format!("subspace_uniform(d={d},D={dim})"),
            GeneratorSpec::Circle { dim, .. } => format!("circle(D={dim})"),
            GeneratorSpec::Torus { d, dim, .. } => format!("torus(d={d},D={dim})"),
            GeneratorSpec::ParetoTail { q_tail, dim } => format!("pareto_tail(q_tail={q_tail},D={dim})"),
        }
    }
}

/// Haar-distributed orthogonal D×D matrix.
pub fn random_rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = seeded(seed);
    let mut entries = vec![0.0; dim * dim];
    fill_normal(&mut rng, &mut entries);
    let qr = DMatrix::from_column_slice(dim, dim, &entries).qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Applies `rotation` to each row of `local`, whose rows have the first
/// `local_dim` coordinates of a point in R^D.
fn embed(local: &[f64], local_dim: usize, rotation: &DMatrix<f64>) -> Vec<f64> {
    let dim = rotation.nrows();
    let mut out = vec![0.0; local.len() / local_dim * dim];
    for (u, x) in local.chunks_exact(local_dim).zip(out.chunks_exact_mut(dim)) {
        for (k, &v) in u.iter().enumerate() {
            for (i, xi) in x.iter_mut().enumerate() {
                *xi += rotation[(i, k)] * v;
            }
        }
    }
    out
}

/// n i.i.d. draws from the generator as a uniform empirical measure.
pub fn generate(spec: &GeneratorSpec, n: usize, seed: u64) -> Result<DiscreteMeasure> {
    spec.validate()?;
    if n == 0 {
        return invalid("sample size must be positive");
    }
    let mut rng = seeded(seed);
    let coords = match spec {
        GeneratorSpec::Point { dim, location } => {
            let x = location.clone().unwrap_or_else(|| vec![0.0; *dim]);
            x.repeat(n)
        }
        GeneratorSpec::Atoms { locations } => (0..n)
            .flat_map(|_| locations[rng.random_range(0..locations.len())].clone())
            .collect(),
        GeneratorSpec::SubspaceUniform { d, dim, rotation_seed } => {
            let local: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>()).collect();
            embed(&local, *d, &random_rotation(*dim, *rotation_seed))
        }
        GeneratorSpec::Circle { dim, rotation_seed } => torus_points(&mut rng, n, 1, *dim, *rotation_seed),
        GeneratorSpec::Torus { d, dim, rotation_seed } => torus_points(&mut rng, n, *d, *dim, *rotation_seed),
        GeneratorSpec::ParetoTail { q_tail, dim } => {
            let mut coords = vec![0.0; n * dim];
            for x in coords.chunks_exact_mut(*dim) {
                loop {
                    fill_normal(&mut rng, x);
                    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        let radius = (1.0 - rng.random::<f64>()).powf(-1.0 / q_tail);
                        x.iter_mut().for_each(|v| *v *= radius / norm);
                        break;
                    }
                }
            }
            coords
        }
    };
    DiscreteMeasure::uniform_flat(spec.dim(), coords)
}

fn torus_points(rng: &mut crate::rng::LabRng, n: usize, d: usize, dim: usize, rotation_seed: u64) -> Vec<f64> {
    let local: Vec<f64> = (0..n * d)
        .flat_map(|_| {
            let theta = TAU * rng.random::<f64>();
            [theta.cos(), theta.sin()]
        })
        .collect();
    embed(&local, 2 * d, &random_rotation(dim, rotation_seed))
}
