//! Battery of seeded invariant checks with measured slacks.

use std::time::Instant;

use crate::diffusion::{kl_bound_to_gaussian, mixture_log_density, sample_forward_flat, BetaSchedule};
use crate::harness::{ExperimentConfig, RunRecord};
use crate::rng::{derive_seed, fill_normal, seeded};
use crate::sampler::{build_partition, discretization_error_sum};
use crate::score::{hessian_exact, score_exact, verify_denoising_identity, ExactScore, FnScore, ScoreFunction, SharedMlpScore, ZeroScore};
use crate::{DiscreteMeasure, Error, Result};

/// `passed` is `None` when the input lies outside the check's validity
/// window; such outcomes are reported but never fail the battery.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: Option<bool>,
    pub measured: f64,
    pub threshold: f64,
    pub wall_time: f64,
}

impl CheckOutcome {
    fn new(name: String, measured: f64, threshold: f64, start: Instant) -> Self {
        CheckOutcome {
            passed: Some(measured <= threshold),
            name,
            measured,
            threshold,
            wall_time: start.elapsed().as_secs_f64(),
        }
    }

    pub fn failed(&self) -> bool {
        self.passed == Some(false)
    }

    /// `<name>.measured`, `<name>.threshold` and `<name>.pass` (1 pass,
    /// 0 fail, −1 rejected input).
    pub fn records(&self, config: &ExperimentConfig) -> Vec<RunRecord> {
        let pass = match self.passed {
            Some(true) => 1.0,
            Some(false) => 0.0,
            None => -1.0,
        };
        [("measured", self.measured), ("threshold", self.threshold), ("pass", pass)]
            .into_iter()
            .map(|(suffix, value)| RunRecord {
                experiment: config.id().to_string(),
                generator: "fixture".into(),
                n: 0,
                rep: None,
                seed: config.experiment.seed,
                metric: format!("{}.{suffix}", self.name),
                value,
                wall_time: self.wall_time,
            })
            .collect()
    }
}

pub fn all_passed(outcomes: &[CheckOutcome]) -> bool {
    outcomes.iter().all(|o| !o.failed())
}

fn random_mixture(seed: u64, atoms: usize, dim: usize, spread: f64) -> Result<DiscreteMeasure> {
    let mut rng = seeded(seed);
    let mut coords = vec![0.0; atoms * dim];
    fill_normal(&mut rng, &mut coords);
    coords.iter_mut().for_each(|v| *v *= spread);
    let mut raw = vec![0.0; atoms];
    fill_normal(&mut rng, &mut raw);
    let weights = raw.iter().map(|v| 0.2 + v.abs()).collect();
    DiscreteMeasure::from_flat_normalized(dim, coords, weights)
}

fn l2(v: impl Iterator<Item = f64>) -> f64 {
    v.map(|x| x * x).sum::<f64>().sqrt()
}

/// ‖a − b‖ / ‖b‖.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    l2(a.iter().zip(b).map(|(u, v)| u - v)) / l2(b.iter().copied()).max(1e-12)
}

fn denoising_checks(config: &ExperimentConfig, out: &mut Vec<CheckOutcome>) -> Result<()> {
    let c = &config.checks;
    let seed = config.experiment.seed;
    let schedule = BetaSchedule::default();
    let measure = random_mixture(derive_seed(seed, 10), 4, 2, 1.0)?;
    let exact = ExactScore::new(measure.clone(), schedule.clone());
    let zero = ZeroScore { dim: 2 };
    let corrupted = FnScore::new(2, |x: &[f64], t: f64, o: &mut [f64]| {
        if exact.eval_into(x, t, o).is_ok() {
            o.iter_mut().for_each(|v| *v += 0.5);
        }
    });
    let network = SharedMlpScore::init(2, &[16, 16], 10.0, schedule.clone(), derive_seed(seed, 11))?;
    let scores: [(&str, &dyn ScoreFunction); 4] = [
        ("exact", &exact),
        ("zero", &zero),
        ("corrupted", &corrupted),
        ("random_mlp", &network),
    ];
    for (k, (label, score)) in scores.iter().enumerate() {
        for (j, &t) in c.times.iter().enumerate() {
            let start = Instant::now();
            let check = verify_denoising_identity(
                &measure,
                &schedule,
                t,
                *score,
                c.mc_samples,
                derive_seed(seed, (100 + 10 * k + j) as u64),
            )?;
            out.push(CheckOutcome::new(
                format!("denoising_identity.{label}.t{t}"),
                check.z_score(),
                c.z_max,
                start,
            ));
        }
    }
    Ok(())
}

fn kl_checks(config: &ExperimentConfig, out: &mut Vec<CheckOutcome>) -> Result<()> {
    let seed = config.experiment.seed;
    let samples = (config.checks.mc_samples / 5).max(1000);
    for k in 0..11usize {
        let start = Instant::now();
        let dim = 1 + k % 3;
        let measure = random_mixture(derive_seed(seed, 200 + k as u64), 1 + 3 * (k % 4), dim, 0.5 + 0.3 * k as f64)?;
        let schedule = if k % 2 == 0 {
            BetaSchedule::default()
        } else {
            BetaSchedule::affine(0.8, 1.5, 1.0)?
        };
        let window = std::f64::consts::LN_2 / schedule.upper();
        // The last configuration sits below the validity window on purpose.
        let t = if k == 10 { 0.5 * window } else { window + 0.1 * k as f64 };
        let name = format!("kl_bound.config{k}");
        let bound = match kl_bound_to_gaussian(&measure, &schedule, t) {
            Ok(b) => b,
            Err(Error::ValidityWindow { min_t, .. }) => {
                out.push(CheckOutcome {
                    name,
                    passed: None,
                    measured: t,
                    threshold: min_t,
                    wall_time: start.elapsed().as_secs_f64(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let flat = sample_forward_flat(&measure, &schedule, t, samples, derive_seed(seed, 300 + k as u64))?;
        let log_norm = 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln();
        let ratios = flat
            .chunks_exact(dim)
            .map(|x| {
                let log_gauss = -0.5 * x.iter().map(|v| v * v).sum::<f64>() - log_norm;
                Ok(mixture_log_density(&measure, &schedule, t, x)? - log_gauss)
            })
            .collect::<Result<Vec<f64>>>()?;
        let m = ratios.len() as f64;
        let mean = ratios.iter().sum::<f64>() / m;
        let se = (ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (m - 1.0) / m).sqrt();
        out.push(CheckOutcome::new(name, mean - 3.0 * se, bound, start));
    }
    Ok(())
}

fn partition_checks(out: &mut Vec<CheckOutcome>) -> Result<()> {
    let schedule = BetaSchedule::default();
    for delta0 in [1e-4, 1e-2, 0.5] {
        for kappa in [0.01, 0.1, 1.0] {
            for horizon in [1.0, 4.0, 10.0] {
                let start = Instant::now();
                let part = build_partition(horizon, delta0, kappa)?;
                let tag = format!("d{delta0}.k{kappa}.T{horizon}");
                out.push(CheckOutcome::new(
                    format!("partition_count.{tag}"),
                    part.steps() as f64,
                    part.count_bound(),
                    start,
                ));
                let sum = discretization_error_sum(&part, &schedule)?;
                out.push(CheckOutcome::new(format!("partition_sum.{tag}"), sum.value, sum.bound, start));
            }
        }
    }
    Ok(())
}

fn derivative_checks(config: &ExperimentConfig, out: &mut Vec<CheckOutcome>) -> Result<()> {
    let seed = config.experiment.seed;
    let schedule = BetaSchedule::default();
    let measure = random_mixture(derive_seed(seed, 400), 5, 3, 1.0)?;
    let mut rng = seeded(derive_seed(seed, 401));
    let (mut grad_err, mut hess_err) = (0.0f64, 0.0f64);
    let start = Instant::now();
    for k in 0..100 {
        let t = 0.15 + 0.03 * k as f64;
        let mut x = vec![0.0; 3];
        fill_normal(&mut rng, &mut x);
        x.iter_mut().for_each(|v| *v *= 1.5);
        let h = 1e-4 * (1.0 + l2(x.iter().copied()));
        let shifted = |j: usize, sign: f64| {
            let mut y = x.clone();
            y[j] += sign * h;
            y
        };
        let fd_grad = (0..3)
            .map(|j| {
                Ok((mixture_log_density(&measure, &schedule, t, &shifted(j, 1.0))?
                    - mixture_log_density(&measure, &schedule, t, &shifted(j, -1.0))?)
                    / (2.0 * h))
            })
            .collect::<Result<Vec<f64>>>()?;
        let score = score_exact(&measure, &schedule, t, &x)?.score;
        grad_err = grad_err.max(rel_err(&score, &fd_grad));

        let hess = hessian_exact(&measure, &schedule, t, &x)?;
        let mut fd = Vec::with_capacity(9);
        let mut analytic = Vec::with_capacity(9);
        for j in 0..3 {
            let sp = score_exact(&measure, &schedule, t, &shifted(j, 1.0))?.score;
            let sm = score_exact(&measure, &schedule, t, &shifted(j, -1.0))?.score;
            for i in 0..3 {
                fd.push((sp[i] - sm[i]) / (2.0 * h));
                analytic.push(hess[(i, j)]);
            }
        }
        hess_err = hess_err.max(rel_err(&analytic, &fd));
    }
    out.push(CheckOutcome::new("score_vs_fd_gradient".into(), grad_err, 1e-5, start));
    out.push(CheckOutcome::new("hessian_vs_fd_jacobian".into(), hess_err, 1e-4, start));
    Ok(())
}

/// Runs the whole battery with seeds derived from the configured master seed.
pub fn run_identity_checks(config: &ExperimentConfig) -> Result<Vec<CheckOutcome>> {
    config.validate()?;
    let mut out = Vec::new();
    denoising_checks(config, &mut out)?;
    kl_checks(config, &mut out)?;
    partition_checks(&mut out)?;
    derivative_checks(config, &mut out)?;
    Ok(out)
}
