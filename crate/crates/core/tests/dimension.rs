mod common;

use common::*;
use proptest::prelude::*;
use scorelab::dimension::*;
use scorelab::harness::generators::{generate, GeneratorSpec};
use scorelab::DiscreteMeasure;

fn line(points: &[f64]) -> DiscreteMeasure {
    DiscreteMeasure::uniform(&points.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
}

fn log_grid(top: f64, bottom: f64, count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| top * (bottom / top).powf(i as f64 / (count - 1) as f64))
        .collect()
}

/// Grid spanning [lo·diam, hi·diam].
fn relative_grid(m: &DiscreteMeasure, lo: f64, hi: f64) -> Vec<f64> {
    let diam = linf_diameter(m);
    log_grid(hi * diam, lo * diam, 10)
}

#[test]
fn covering_examples() {
    let single = DiscreteMeasure::dirac(&[0.3, 0.7]).unwrap();
    for eps in [1e-6, 0.1, 10.0] {
        assert_eq!(covering_number(&single, eps, Norm::Linf).unwrap(), 1);
        assert_eq!(packing_number(&single, eps, Norm::L2).unwrap(), 1);
    }
    let pair = line(&[0.0, 1.0]);
    assert_eq!(covering_number(&pair, 0.4, Norm::Linf).unwrap(), 2);
    assert_eq!(packing_number(&pair, 2.0, Norm::Linf).unwrap(), 1);
    for k in 1..=6 {
        let m = 3usize.pow(k);
        let grid = line(&(0..m).map(|i| (i as f64 + 0.5) / m as f64).collect::<Vec<_>>());
        assert_eq!(covering_number(&grid, 0.5 / m as f64, Norm::Linf).unwrap(), m);
    }
    assert!(covering_number(&pair, 0.0, Norm::Linf).is_err());
    assert!(packing_number(&pair, -1.0, Norm::Linf).is_err());
}

#[test]
fn norm_choice_matters() {
    let m = DiscreteMeasure::uniform(&[vec![0.0, 0.0], vec![0.3, 0.3]]).unwrap();
    assert_eq!(covering_number(&m, 0.35, Norm::Linf).unwrap(), 1);
    assert_eq!(covering_number(&m, 0.35, Norm::L2).unwrap(), 2);
}

/// Smallest number of atom-centered closed balls covering every atom.
fn brute_force_cover(m: &DiscreteMeasure, eps: f64) -> usize {
    let n = m.len();
    (1u32..1 << n)
        .filter(|mask| {
            (0..n).all(|i| (0..n).any(|c| mask & (1 << c) != 0 && Norm::Linf.distance(m.point(i), m.point(c)) <= eps))
        })
        .map(|mask| mask.count_ones() as usize)
        .min()
        .unwrap()
}

#[test]
fn greedy_cover_against_brute_force() {
    let mut r = rng(1);
    for trial in 0..60 {
        let m = unit_cube_cloud(&mut r, 3 + trial % 7, 1 + trial % 3);
        for eps in [0.05, 0.15, 0.3, 0.6] {
            let cover = greedy_cover(&m, eps, Norm::Linf).unwrap();
            for (i, &a) in cover.assignment.iter().enumerate() {
                assert!(Norm::Linf.distance(m.point(i), m.point(cover.centers[a])) <= eps);
            }
            for (k, &a) in cover.centers.iter().enumerate() {
                for &b in &cover.centers[..k] {
                    assert!(Norm::Linf.distance(m.point(a), m.point(b)) > eps);
                }
            }
            // Centers more than ε apart occupy distinct ε/2 balls.
            assert!(cover.len() >= brute_force_cover(&m, eps));
            assert!(cover.len() <= brute_force_cover(&m, eps / 2.0));
        }
    }
}

#[test]
fn packing_sandwich_on_seeded_clouds() {
    let mut r = rng(2);
    for trial in 0..50 {
        let m = gaussian_cloud(&mut r, 40 + trial, 1 + trial % 4, 1.0);
        for eps in [0.05, 0.2, 0.5, 1.0] {
            for norm in [Norm::Linf, Norm::L2] {
                let cover = covering_number(&m, eps, norm).unwrap();
                assert!(packing_number(&m, 2.0 * eps, norm).unwrap() <= cover);
                assert!(cover <= packing_number(&m, eps, norm).unwrap());
            }
        }
    }
}

proptest! {
    #[test]
    fn dyadic_scaling_is_exact(seed in 0u64..500, power in -3i32..4, eps in 0.02f64..1.0) {
        let mut r = rng(seed);
        let m = gaussian_cloud(&mut r, 30, 3, 1.0);
        let c = 2f64.powi(power);
        let scaled = m.map_points(|x, out| {
            for (o, v) in out.iter_mut().zip(x) {
                *o = c * v;
            }
        });
        prop_assert_eq!(
            covering_number(&scaled, eps, Norm::Linf).unwrap(),
            covering_number(&m, eps / c, Norm::Linf).unwrap()
        );
    }

    #[test]
    fn tau_cover_monotone(seed in 0u64..500, eps in 0.05f64..1.0) {
        let mut r = rng(seed);
        let m = DiscreteMeasure::new(
            &(0..25).map(|_| random_vector(&mut r, 2, 1.0)).collect::<Vec<_>>(),
            random_weights(&mut r, 25),
        )
        .unwrap();
        let full = covering_number(&m, eps, Norm::Linf).unwrap();
        prop_assert_eq!(epsilon_tau_cover(&m, eps, 0.0).unwrap(), full);
        let mut last = full;
        for k in 1..20 {
            let c = epsilon_tau_cover(&m, eps, 0.05 * k as f64).unwrap();
            prop_assert!(c <= last && c >= 1);
            last = c;
        }
    }
}

#[test]
fn far_outlier_is_discarded() {
    let mut r = rng(3);
    let mut pts: Vec<Vec<f64>> = (0..19).map(|_| random_vector(&mut r, 2, 0.1)).collect();
    pts.push(vec![50.0, 50.0]);
    let mut weights = vec![0.95 / 19.0; 19];
    weights.push(0.05);
    let m = DiscreteMeasure::new(&pts, weights).unwrap();
    let base = epsilon_tau_cover(&m, 0.5, 0.0).unwrap();
    assert!(epsilon_tau_cover(&m, 0.5, 0.1).unwrap() < base);
    assert!(epsilon_tau_cover(&m, 0.5, 1.0).is_err());
    assert!(epsilon_tau_cover(&m, 0.5, -0.1).is_err());
}

#[test]
fn profile_is_monotone_and_serializes() {
    let mut r = rng(4);
    let m = gaussian_cloud(&mut r, 300, 3, 1.0);
    let grid = log_grid(2.0, 0.02, 15);
    let p = covering_profile(&m, &grid, 0.0, Norm::Linf).unwrap();
    assert!(p.counts.windows(2).all(|w| w[0] <= w[1]));
    assert!(p.counts.iter().all(|&c| c >= 1));
    for (e, c) in grid.iter().zip(&p.counts) {
        assert!(*c <= covering_number(&m, *e, Norm::Linf).unwrap());
    }
    let mut buf = Vec::new();
    p.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("epsilon,count\n"));
    assert_eq!(text.lines().count(), 16);
    assert!(covering_profile(&m, &[0.1, 0.2], 0.0, Norm::Linf).is_err());
}

#[test]
fn minkowski_on_embedded_segment() {
    for seed in 0..3 {
        let spec = GeneratorSpec::SubspaceUniform {
            d: 1,
            dim: 8,
            rotation_seed: 10 + seed,
        };
        let m = generate(&spec, 2000, seed).unwrap();
        let est = fit_minkowski_dimension(&m, &relative_grid(&m, 0.01, 0.5)).unwrap();
        assert!((0.8..=1.2).contains(&est.slope), "seed {seed}: {}", est.slope);
        assert!((0.0..=1.0).contains(&est.r_squared));
    }
}

#[test]
fn minkowski_on_embedded_torus() {
    for seed in 0..3 {
        let spec = GeneratorSpec::Torus {
            d: 2,
            dim: 8,
            rotation_seed: 20 + seed,
        };
        let m = generate(&spec, 2000, seed).unwrap();
        let est = fit_minkowski_dimension(&m, &relative_grid(&m, 0.03, 0.5)).unwrap();
        assert!((1.6..=2.4).contains(&est.slope), "seed {seed}: {}", est.slope);
    }
}

#[test]
fn point_mass_estimates() {
    let m = DiscreteMeasure::uniform(&vec![vec![0.5; 3]; 50]).unwrap();
    let grid = log_grid(1.0, 0.01, 6);
    let mink = fit_minkowski_dimension(&m, &grid).unwrap();
    assert_eq!(mink.slope, 0.0);
    for p in [0.5, 1.0, 1.5] {
        let w = fit_wasserstein_pq_dimension(&m, p, 4.0, &grid).unwrap();
        assert!((w.slope - 2.0 * p).abs() < 1e-12);
        assert!(!w.saturated);
    }
}

#[test]
fn fit_guards() {
    let m = line(&[0.0, 0.5, 1.0]);
    assert!(fit_minkowski_dimension(&m, &[1.0, 0.5, 0.2]).is_err());
    assert!(fit_minkowski_dimension(&m, &[1.0, 0.8, 0.6, 0.4]).is_err());
    assert!(fit_minkowski_dimension(&m, &[0.01, 0.1, 0.5, 1.0]).is_err());
    let grid = log_grid(1.0, 0.01, 5);
    assert!(fit_wasserstein_pq_dimension(&m, 2.0, 2.0, &grid).is_err());
    assert!(fit_wasserstein_pq_dimension(&m, 0.0, 2.0, &grid).is_err());
}

fn ordering_fixtures() -> Vec<(String, DiscreteMeasure, Vec<f64>)> {
    let specs = [
        (GeneratorSpec::SubspaceUniform { d: 1, dim: 8, rotation_seed: 1 }, 0.01),
        (GeneratorSpec::Torus { d: 2, dim: 8, rotation_seed: 2 }, 0.03),
        (GeneratorSpec::SubspaceUniform { d: 3, dim: 8, rotation_seed: 3 }, 0.03),
    ];
    let mut out = Vec::new();
    for (spec, lo) in specs {
        for seed in 0..3 {
            let m = generate(&spec, 2000, 100 + seed).unwrap();
            let grid = relative_grid(&m, lo, 0.5);
            out.push((format!("{} seed {seed}", spec.label()), m, grid));
        }
    }
    out
}

#[test]
fn wasserstein_dimension_orderings() {
    for (label, m, grid) in ordering_fixtures() {
        let mink = fit_minkowski_dimension(&m, &grid).unwrap().slope;
        for p in [0.2, 0.4] {
            let mut last = f64::INFINITY;
            for q in [1.0, 2.0, 4.0, 10.0] {
                let w = fit_wasserstein_pq_dimension(&m, p, q, &grid).unwrap();
                assert!(w.slope <= last + S_GRID_STEP + 1e-9, "{label}: not monotone in q");
                assert!(w.slope <= mink + S_GRID_STEP + 1e-9, "{label}: {} > {mink}", w.slope);
                assert!(w.slope >= 2.0 * p - 1e-12);
                last = w.slope;
            }
        }
        for q in [2.0, 6.0] {
            let lo = fit_wasserstein_pq_dimension(&m, 0.2, q, &grid).unwrap().slope;
            let hi = fit_wasserstein_pq_dimension(&m, 0.4, q, &grid).unwrap().slope;
            assert!(hi >= lo - S_GRID_STEP - 1e-9, "{label}: not monotone in p");
        }
    }
}

#[test]
fn estimate_record_is_json() {
    let m = generate(&GeneratorSpec::Circle { dim: 3, rotation_seed: 0 }, 500, 0).unwrap();
    let grid = relative_grid(&m, 0.02, 0.5);
    let est = fit_wasserstein_pq_dimension(&m, 0.25, 2.0, &grid).unwrap();
    let json: serde_json::Value = serde_json::from_str(&est.to_json()).unwrap();
    assert_eq!(json["kind"], "wasserstein_pq");
    assert_eq!(json["p"], 0.25);
    assert!(json["window"].as_array().unwrap().len() == 2);
}

#[test]
#[ignore = "greedy l-infinity box counting reaches only 2.1-3.0 on a rotated 4-cube for n <= 32000"]
fn four_dimensional_cube_estimate() {
    let spec = GeneratorSpec::SubspaceUniform {
        d: 4,
        dim: 8,
        rotation_seed: 1,
    };
    let m = generate(&spec, 8000, 5).unwrap();
    let grid = relative_grid(&m, 0.05, 0.5);
    let est = fit_wasserstein_pq_dimension(&m, 1.0, 10.0, &grid).unwrap();
    assert!((3.2..=4.8).contains(&est.slope), "{}", est.slope);
}
