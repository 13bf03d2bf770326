mod common;

use common::*;
use proptest::prelude::*;
use scorelab::diffusion::{marginal_at, BetaSchedule};
use scorelab::measure::MomentSummary;
use scorelab::ot::wasserstein_p_exact;
use scorelab::sampler::*;
use scorelab::score::{ExactScore, FnScore, ScoreFunction};
use scorelab::{DiscreteMeasure, Error};

#[test]
fn geometric_phase_count() {
    let part = build_partition(2.0, 3f64.powi(-4), 0.5).unwrap();
    let below_one = part.forward_knots().iter().filter(|&&t| t < 1.0).count();
    assert_eq!(below_one, 11);
    for (i, &t) in part.forward_knots().iter().take(11).enumerate() {
        assert!((t - 1.5f64.powi(i as i32) / 81.0).abs() < 1e-12);
    }
}

#[test]
fn reverse_knots_reflect_forward_knots() {
    let part = build_partition(3.0, 0.01, 0.2).unwrap();
    let rev = part.reverse_knots();
    assert_eq!(rev[0], 0.0);
    assert!((rev[part.steps()] - (3.0 - 0.01)).abs() < 1e-15);
    assert!(rev.windows(2).all(|w| w[1] > w[0]));
    let h = part.reverse_steps();
    for i in 0..part.steps() {
        assert!((rev[i + 1] - rev[i] - h[i]).abs() < 1e-12);
        assert_eq!(part.score_time(i), part.forward_knots()[part.steps() - i]);
    }
}

proptest! {
    #[test]
    fn partition_recursion_and_count_bound(
        log_delta in -9.0f64..-0.1, kappa in 0.01f64..1.0, horizon in 1.0f64..12.0
    ) {
        let delta0 = log_delta.exp();
        let part = build_partition(horizon, delta0, kappa).unwrap();
        let f = part.forward_knots();
        prop_assert_eq!(f[0], delta0);
        prop_assert_eq!(*f.last().unwrap(), horizon);
        let n = part.steps();
        for i in 0..n - 1 {
            prop_assert!((f[i + 1] - f[i] - kappa * f[i].min(1.0)).abs() <= 1e-12);
        }
        prop_assert!(f[n] - f[n - 1] <= kappa * f[n - 1].min(1.0) + 1e-12);
        prop_assert!(n as f64 <= part.count_bound());
    }

    #[test]
    fn discretization_sum_within_explicit_bound(
        log_delta in -9.0f64..-0.1, kappa in 0.01f64..1.0, horizon in 1.0f64..12.0, rate in 0.3f64..3.0
    ) {
        let part = build_partition(horizon, log_delta.exp(), kappa).unwrap();
        let sched = BetaSchedule::constant(rate).unwrap();
        let sum = discretization_error_sum(&part, &sched).unwrap();
        prop_assert!(sum.value <= sum.bound);
    }
}

#[test]
fn single_step_discretization_sum() {
    let part = build_partition(2.0, 1.0, 1.0).unwrap();
    let sum = discretization_error_sum(&part, &BetaSchedule::default()).unwrap();
    let expect = 1.0 / (1.0 - (-2.0f64).exp()).powi(2);
    assert!((sum.value - expect).abs() < 1e-12);
    assert!((sum.value - 1.33753).abs() < 1e-5);
    let c = (1.0 / std::f64::consts::LN_2 + 1.0) / (1.0 - (-1.0f64).exp()).powi(2);
    assert!((sum.constant - c).abs() < 1e-12);
}

#[test]
fn halving_kappa_roughly_halves_the_sum() {
    let sched = BetaSchedule::default();
    for (delta0, horizon) in [(1e-3, 5.0), (1e-2, 2.0), (0.1, 8.0)] {
        for kappa in [0.4, 0.1, 0.02] {
            let a = discretization_error_sum(&build_partition(horizon, delta0, kappa).unwrap(), &sched).unwrap();
            let b = discretization_error_sum(&build_partition(horizon, delta0, kappa / 2.0).unwrap(), &sched).unwrap();
            let ratio = b.value / a.value;
            assert!((0.3..=0.7).contains(&ratio), "delta0 {delta0} T {horizon} kappa {kappa}: {ratio}");
        }
    }
}

#[test]
fn twenty_seven_point_sweep() {
    for delta0 in [1e-4, 1e-2, 0.5] {
        for kappa in [0.01, 0.1, 1.0] {
            for horizon in [1.0, 4.0, 10.0] {
                let part = build_partition(horizon, delta0, kappa).unwrap();
                assert!(part.steps() as f64 <= part.count_bound());
                for sched in [BetaSchedule::default(), BetaSchedule::affine(0.5, 2.0, 3.0).unwrap()] {
                    let sum = discretization_error_sum(&part, &sched).unwrap();
                    assert!(sum.value <= sum.bound, "{delta0} {kappa} {horizon} {}", sched.kind());
                }
            }
        }
    }
}

fn config(horizon: f64, delta0: f64, kappa: f64, rate: f64, seed: u64) -> SamplerConfig {
    let sched = BetaSchedule::constant(rate).unwrap();
    SamplerConfig::new(sched, build_partition(horizon, delta0, kappa).unwrap(), 10.0, seed).unwrap()
}

#[test]
fn hand_computed_step() {
    let cfg = config(2.0, 1.0, 1.0, std::f64::consts::LN_2, 0);
    assert!((cfg.step_integral(0) - std::f64::consts::LN_2).abs() < 1e-15);
    let zero = FnScore::new(1, |_: &[f64], _: f64, out: &mut [f64]| out.fill(0.0));
    let y = reverse_step(&[1.0], 0, &zero, &cfg, &[0.5]).unwrap();
    assert!((y[0] - (2.0 + 0.5 * 3f64.sqrt())).abs() < 1e-14);
    assert!(reverse_step(&[1.0], 1, &zero, &cfg, &[0.5]).is_err());
}

fn mean_cov(m: &DiscreteMeasure) -> (Vec<f64>, Vec<f64>) {
    let d = m.dim();
    let n = m.len() as f64;
    let mut mean = vec![0.0; d];
    for x in m.points() {
        for k in 0..d {
            mean[k] += x[k] / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for x in m.points() {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (x[i] - mean[i]) * (x[j] - mean[j]) / (n - 1.0);
            }
        }
    }
    (mean, cov)
}

/// Per-step affine maps y ↦ a y + b + c Z for a score that is affine in y.
fn gaussian_recursion(cfg: &SamplerConfig, slope: impl Fn(f64) -> f64, offset: impl Fn(f64) -> f64) -> (f64, f64) {
    let (mut mean, mut var) = (0.0, 1.0);
    for i in 0..cfg.partition.steps() {
        let t = cfg.partition.score_time(i);
        let e = cfg.step_integral(i).exp_m1();
        let a = 1.0 + e * (1.0 + 2.0 * slope(t));
        let b = 2.0 * e * offset(t);
        let c2 = (2.0 * cfg.step_integral(i)).exp_m1();
        mean = a * mean + b;
        var = a * a * var + c2;
    }
    (mean, var)
}

#[test]
fn gaussian_score_chain_matches_exact_recursion() {
    let cfg = config(3.0, 0.05, 0.1, 1.0, 21);
    let g = FnScore::new(2, |x: &[f64], _: f64, out: &mut [f64]| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    });
    let count = 100_000;
    let out = sample_reverse(&g, &cfg, count).unwrap();
    let (_, var) = gaussian_recursion(&cfg, |_| -1.0, |_| 0.0);
    let (mean, cov) = mean_cov(&out);
    let se_var = var * (2.0 / count as f64).sqrt();
    for k in 0..2 {
        assert!(mean[k].abs() <= 5.0 * (var / count as f64).sqrt());
        assert!((cov[k * 2 + k] - var).abs() <= 5.0 * se_var, "{} vs {var}", cov[k * 2 + k]);
    }
    assert!(cov[1].abs() <= 5.0 * var / (count as f64).sqrt());
}

#[test]
fn gaussian_score_is_stationary_for_fine_partitions() {
    let cfg = config(4.0, 0.01, 2e-3, 1.0, 22);
    let g = FnScore::new(2, |x: &[f64], _: f64, out: &mut [f64]| {
        for (o, v) in out.iter_mut().zip(x) {
            *o = -v;
        }
    });
    let count = 10_000;
    let out = sample_reverse(&g, &cfg, count).unwrap();
    let (mean, cov) = mean_cov(&out);
    let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(norm <= 5.0 * (2.0 / count as f64).sqrt());
    let se = (2.0 / count as f64).sqrt();
    assert!((cov[0] - 1.0).abs() <= 5.0 * se && (cov[3] - 1.0).abs() <= 5.0 * se);
    assert!(cov[1].abs() <= 5.0 / (count as f64).sqrt());
}

#[test]
fn point_mass_chain_matches_linear_gaussian_target() {
    let x0 = [1.5, -0.5];
    let mu = DiscreteMeasure::dirac(&x0).unwrap();
    let cfg = config(5.0, 0.05, 0.02, 1.0, 23);
    let exact = ExactScore::new(mu, cfg.schedule.clone());
    let count = 20_000;
    let out = sample_reverse(&exact, &cfg, count).unwrap();
    let (mean, cov) = mean_cov(&out);
    let sched = cfg.schedule.clone();
    let end = marginal_at(&sched, 0.05).unwrap();
    for k in 0..2 {
        let (m_rec, v_rec) = gaussian_recursion(
            &cfg,
            |t| -1.0 / marginal_at(&sched, t).unwrap().sigma2,
            |t| {
                let p = marginal_at(&sched, t).unwrap();
                p.m * x0[k] / p.sigma2
            },
        );
        let se_m = (v_rec / count as f64).sqrt();
        assert!((mean[k] - m_rec).abs() <= 5.0 * se_m, "mean {} vs {m_rec}", mean[k]);
        assert!((cov[k * 2 + k] - v_rec).abs() <= 5.0 * v_rec * (2.0 / count as f64).sqrt());
        // The chain lands close to the continuous-time target N(m x0, σ² I).
        assert!((m_rec - end.m * x0[k]).abs() < 0.02);
        assert!((v_rec / end.sigma2 - 1.0).abs() < 0.1);
    }
}

#[test]
fn two_atom_pipeline_recovers_atoms() {
    let mu = DiscreteMeasure::uniform(&[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    let cfg = config(8.0, 1e-3, 0.05, 1.0, 24);
    let exact = ExactScore::new(mu, cfg.schedule.clone());
    let out = sample_reverse(&exact, &cfg, 4000).unwrap();
    let mut r = rng(25);
    let fresh: Vec<f64> = (0..4000)
        .flat_map(|_| {
            let s = if rand::Rng::random::<bool>(&mut r) { 1.0 } else { -1.0 };
            [s, 0.0]
        })
        .collect();
    let fresh = DiscreteMeasure::uniform_flat(2, fresh).unwrap();
    let w1 = wasserstein_p_exact(&out, &fresh, 1.0).unwrap().0;
    assert!(w1 <= 0.1 * 2.0, "W1 = {w1}");
}

#[test]
fn sampling_independent_of_thread_count_and_rejects_empty() {
    let mut r = rng(26);
    let mu = gaussian_cloud(&mut r, 5, 3, 1.0);
    let cfg = config(2.0, 0.05, 0.3, 1.0, 27);
    let exact = ExactScore::new(mu, cfg.schedule.clone());
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| sample_reverse(&exact, &cfg, 700).unwrap())
    };
    assert_eq!(run(1), run(4));
    assert!(matches!(sample_reverse(&exact, &cfg, 0), Err(Error::EmptyMeasure)));
}

struct Failing;

impl ScoreFunction for Failing {
    fn dim(&self) -> usize {
        1
    }

    fn eval_into(&self, _x: &[f64], t: f64, _out: &mut [f64]) -> scorelab::Result<()> {
        Err(Error::InvalidInput(format!("no score at {t}")))
    }
}

#[test]
fn score_failures_carry_the_step() {
    let cfg = config(2.0, 0.5, 0.5, 1.0, 0);
    match sample_reverse(&Failing, &cfg, 3) {
        Err(Error::Score { step: 0, .. }) => {}
        other => panic!("expected a step-0 score error, got {other:?}"),
    }
}

#[test]
fn truncation_zeroes_out_of_box_atoms() {
    let m = DiscreteMeasure::new(&[vec![0.5, -0.9], vec![2.0, 0.0], vec![0.1, -3.0]], vec![0.2, 0.3, 0.5]).unwrap();
    let t = truncate(&m, 1.0).unwrap();
    assert_eq!(t.point(0), &[0.5, -0.9]);
    assert_eq!(t.point(1), &[0.0, 0.0]);
    assert_eq!(t.point(2), &[0.0, 0.0]);
    assert_eq!(t.weights(), m.weights());
    assert_eq!(truncate(&t, 1.0).unwrap(), t);
    assert_eq!(truncate(&m, 5.0).unwrap(), m);
    assert!(truncate(&m, 0.0).is_err());
}

proptest! {
    #[test]
    fn truncation_properties(seed in 0u64..1000, radius in 0.1f64..3.0) {
        let mut r = rng(seed);
        let m = gaussian_cloud(&mut r, 20, 3, 1.5);
        let t = truncate(&m, radius).unwrap();
        prop_assert_eq!(t.weights(), m.weights());
        prop_assert!(t.points().all(|x| x.iter().all(|v| v.abs() <= radius)));
        prop_assert_eq!(truncate(&t, radius).unwrap(), t);
    }
}

fn unit_moments(q: f64) -> MomentSummary {
    MomentSummary {
        q,
        value: 1.0,
        sup_norm_max: 1.0,
        second: 1.0,
    }
}

#[test]
fn hyperparameter_examples() {
    let sched = BetaSchedule::default();
    let hp = select_hyperparams(256, 4.0, 1.0, 4.0, &unit_moments(4.0), 2, &sched).unwrap();
    assert!((hp.delta0 - 0.0625).abs() < 1e-15);
    // κ = n^{-2(1+3)/(4·3)} = n^{-2/3}
    assert!((hp.kappa - 256f64.powf(-2.0 / 3.0)).abs() < 1e-15);
    let hp2 = select_hyperparams(512, 4.0, 1.0, 4.0, &unit_moments(4.0), 2, &sched).unwrap();
    assert!((hp2.kappa / hp.kappa - 2f64.powf(-2.0 / 3.0)).abs() < 1e-14);

    // Independent route: T = (p/β)(log R + log(n)/d + ½ log D + log(D + M₂²)/(2p)).
    let ln_r = hp.truncation_r.ln();
    let alt = ln_r + 256f64.ln() / 4.0 + 0.5 * 2f64.ln() + 3f64.ln() / 2.0;
    assert!((hp.horizon - alt).abs() < 1e-12);
    // Term by term: log(256)/3 + ½ log 2 + log(1 + 8)/3 + ½ log 3 + log 2.
    let terms = 256f64.ln() / 3.0 + 0.5 * 2f64.ln() + 9f64.ln() / 3.0 + 0.5 * 3f64.ln() + 2f64.ln();
    assert!((hp.horizon - terms).abs() < 1e-12);
    assert!((hp.horizon - 4.16983).abs() < 1e-5);
    // R = 2^{1} · 256^{1/12} · 9^{1/3}
    assert!((hp.truncation_r - 2.0 * 256f64.powf(1.0 / 12.0) * 9f64.powf(1.0 / 3.0)).abs() < 1e-12);
    assert!((hp.moment_sum - 9.0).abs() < 1e-12);
}

#[test]
fn horizon_scales_with_inverse_lower_rate() {
    let slow = BetaSchedule::constant(0.5).unwrap();
    let a = select_hyperparams(100, 5.0, 1.0, 3.0, &unit_moments(3.0), 3, &BetaSchedule::default()).unwrap();
    let b = select_hyperparams(100, 5.0, 1.0, 3.0, &unit_moments(3.0), 3, &slow).unwrap();
    assert!((b.horizon - 2.0 * a.horizon).abs() < 1e-12);
}

#[test]
fn hyperparameter_guards() {
    let sched = BetaSchedule::default();
    let err = select_hyperparams(256, 2.0, 1.0, 4.0, &unit_moments(4.0), 2, &sched).unwrap_err();
    assert!(err.to_string().contains("2p"));
    assert!(select_hyperparams(1, 4.0, 1.0, 4.0, &unit_moments(4.0), 2, &sched).is_err());
    assert!(select_hyperparams(256, 4.0, 1.0, 1.0, &unit_moments(1.0), 2, &sched).is_err());
    assert!(select_hyperparams(256, 4.0, 1.0, 4.0, &unit_moments(3.0), 2, &sched).is_err());
}

#[test]
fn truncation_tail_matches_rate() {
    let sched = BetaSchedule::default();
    for (n, d, p, q) in [(256, 4.0, 1.0, 4.0), (1000, 3.0, 1.0, 2.5), (64, 6.0, 1.5, 5.0), (500, 2.5, 0.9, 4.0)] {
        let mom = MomentSummary {
            q,
            value: 1.7,
            sup_norm_max: 2.0,
            second: 2.2,
        };
        let hp = select_hyperparams(n, d, p, q, &mom, 3, &sched).unwrap();
        let expect = (n as f64).powf(-1.0 / (d * p * p));
        assert!((hp.truncation_tail_bound() - expect).abs() < 1e-12 * expect.max(1.0));
        if p == 1.0 {
            assert!((hp.truncation_tail_bound() - (n as f64).powf(-1.0 / d)).abs() < 1e-12);
        }
        let part = hp.partition().unwrap();
        assert!(part.steps() as f64 <= part.count_bound());
    }
}
