//! Rate experiments and dimension estimates over an n-grid.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::diffusion::kl_bound_to_gaussian;
use crate::dimension::{default_epsilon_grid, fit_minkowski_dimension, fit_wasserstein_pq_dimension};
use crate::fit::ols;
use crate::harness::report::sort_records;
use crate::harness::{generate, ExperimentConfig, RunRecord, ScoreMode};
use crate::ot::wasserstein_p_auto;
use crate::rng::derive_seed;
use crate::sampler::{discretization_error_sum, sample_reverse, select_hyperparams, truncate, SamplerConfig};
use crate::score::{train_shared, ExactScore, ScoreFunction, SharedMlpScore, TrainConfig};
use crate::{invalid, Error, Result};

/// Log-log least squares of value against n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr_slope: f64,
    pub n_points: usize,
}

/// OLS of log value on log n. Needs at least three pairs with positive n
/// and positive values.
pub fn fit_rate(pairs: &[(f64, f64)]) -> Result<RateFit> {
    if pairs.len() < 3 {
        return invalid(format!("a rate fit needs at least 3 points, got {}", pairs.len()));
    }
    if let Some(&(n, v)) = pairs.iter().find(|&&(n, v)| !(n > 0.0 && v > 0.0)) {
        return invalid(format!("rate fits need positive n and values, got ({n}, {v})"));
    }
    let xs: Vec<f64> = pairs.iter().map(|(n, _)| n.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|(_, v)| v.ln()).collect();
    let f = ols(&xs, &ys)?;
    Ok(RateFit {
        slope: f.slope,
        intercept: f.intercept,
        stderr_slope: f.stderr_slope,
        n_points: f.n_points,
    })
}

/// Records of one experiment, the per-n means of its headline metric and
/// their fit. `fit` is `None` when the means do not admit a log-log fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RateOutcome {
    pub metric: String,
    pub records: Vec<RunRecord>,
    pub means: Vec<(usize, f64)>,
    pub fit: Option<RateFit>,
    pub failed_runs: usize,
}

impl RateOutcome {
    /// Every mean is zero, so no rate can be fitted.
    pub fn is_degenerate(&self) -> bool {
        self.fit.is_none()
    }
}

struct Cell {
    n: usize,
    rep: usize,
    seed: u64,
}

fn cells(config: &ExperimentConfig) -> Vec<Cell> {
    let e = &config.experiment;
    e.n_grid
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| {
            (0..e.reps).map(move |rep| Cell {
                n,
                rep,
                seed: derive_seed(e.seed, (ni * e.reps + rep) as u64),
            })
        })
        .collect()
}

fn record(config: &ExperimentConfig, cell: &Cell, metric: &str, value: f64, wall_time: f64) -> RunRecord {
    RunRecord {
        experiment: config.id().to_string(),
        generator: config.generator.label(),
        n: cell.n,
        rep: Some(cell.rep),
        seed: cell.seed,
        metric: metric.to_string(),
        value,
        wall_time,
    }
}

/// Appends per-n means and standard deviations of `metric` and fits the
/// means.
fn summarize(config: &ExperimentConfig, metric: &str, mut records: Vec<RunRecord>, failed_runs: usize) -> Result<RateOutcome> {
    let mut means = Vec::new();
    for &n in &config.experiment.n_grid {
        let vals: Vec<f64> = records
            .iter()
            .filter(|r| r.n == n && r.metric == metric)
            .map(|r| r.value)
            .collect();
        if vals.is_empty() {
            continue;
        }
        let k = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / k;
        let sd = if vals.len() > 1 {
            (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        for (suffix, value) in [("mean", mean), ("sd", sd)] {
            records.push(RunRecord {
                experiment: config.id().to_string(),
                generator: config.generator.label(),
                n,
                rep: None,
                seed: config.experiment.seed,
                metric: format!("{metric}_{suffix}"),
                value,
                wall_time: 0.0,
            });
        }
        means.push((n, mean));
    }
    let pairs: Vec<(f64, f64)> = means.iter().map(|&(n, v)| (n as f64, v)).collect();
    let fit = if pairs.len() >= 3 && pairs.iter().all(|&(_, v)| v > 0.0) {
        Some(fit_rate(&pairs)?)
    } else {
        None
    };
    sort_records(&mut records);
    Ok(RateOutcome {
        metric: metric.to_string(),
        records,
        means,
        fit,
        failed_runs,
    })
}

/// W_p between an n-sample and an independent held-out sample of size
/// `reference_factor`·n, averaged over repetitions and fitted against n.
pub fn run_emp_rate(config: &ExperimentConfig) -> Result<RateOutcome> {
    config.validate()?;
    let p = config.experiment.p;
    let records = cells(config)
        .par_iter()
        .map(|cell| {
            let start = Instant::now();
            let data = generate(&config.generator, cell.n, derive_seed(cell.seed, 0))?;
            let reference = generate(
                &config.generator,
                cell.n * config.ot.reference_factor,
                derive_seed(cell.seed, 1),
            )?;
            let wp = wasserstein_p_auto(&data, &reference, p, config.ot.exact_cutoff)?;
            Ok(record(config, cell, "wp", wp, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(config, "wp", records, 0)
}

fn intrinsic_dim(config: &ExperimentConfig) -> Result<f64> {
    config
        .sampler
        .intrinsic_dim
        .or_else(|| config.generator.intrinsic_dim())
        .ok_or_else(|| Error::InvalidInput("set sampler.intrinsic_dim for this generator".into()))
}

/// One pipeline run; `Ok(None)` when training diverged.
fn pipeline_cell(config: &ExperimentConfig, cell: &Cell, d: f64) -> Result<Option<Vec<RunRecord>>> {
    let start = Instant::now();
    let e = &config.experiment;
    let schedule = config.sampler.schedule()?;
    let data = generate(&config.generator, cell.n, derive_seed(cell.seed, 0))?;
    let count = config.sampler.count.unwrap_or(cell.n);
    let heldout = generate(
        &config.generator,
        count * config.ot.reference_factor,
        derive_seed(cell.seed, 1),
    )?;
    let moments = data.moments(e.q)?;
    let hp = select_hyperparams(cell.n, d, e.p, e.q, &moments, data.dim(), &schedule)?;
    let partition = hp.partition()?;
    let mut extra = Vec::new();
    let trained;
    let exact;
    let score: &dyn ScoreFunction = match config.sampler.score {
        ScoreMode::Exact => {
            exact = ExactScore::new(data.clone(), schedule.clone());
            &exact
        }
        ScoreMode::Trained => {
            let t = &config.training;
            let model = SharedMlpScore::init(
                data.dim(),
                &t.hidden,
                t.weight_bound,
                schedule.clone(),
                derive_seed(cell.seed, 2),
            )?;
            let train = TrainConfig::uniform(
                partition.clone(),
                t.mc_per_knot,
                t.optimizer(),
                t.steps,
                derive_seed(cell.seed, 3),
            );
            match train_shared(model, &data, &train) {
                Ok(outcome) => {
                    extra.push(("final_loss", *outcome.trace.last().unwrap_or(&f64::NAN)));
                    trained = outcome.model;
                    &trained
                }
                Err(Error::Diverged { .. }) => return Ok(None),
                Err(err) => return Err(err),
            }
        }
    };
    let sampler = SamplerConfig::new(schedule.clone(), partition.clone(), hp.truncation_r, derive_seed(cell.seed, 4))?;
    let generated = truncate(&sample_reverse(score, &sampler, count)?, hp.truncation_r)?;
    let cutoff = config.ot.exact_cutoff;
    let wp = wasserstein_p_auto(&generated, &heldout, e.p, cutoff)?;
    let generalization = wasserstein_p_auto(&data, &heldout, e.p, cutoff)?;
    let disc = discretization_error_sum(&partition, &schedule)?;
    let mut metrics = vec![
        ("wp", wp),
        ("generalization", generalization),
        ("discretization_sum", disc.value),
        ("discretization_bound", disc.bound),
        ("truncation_tail", hp.truncation_tail_bound()),
        ("truncation_radius", hp.truncation_r),
        ("horizon", hp.horizon),
        ("steps", partition.steps() as f64),
    ];
    if let Ok(kl) = kl_bound_to_gaussian(&data, &schedule, hp.horizon) {
        metrics.push(("kl_bound", kl));
    }
    metrics.extend(extra);
    let wall = start.elapsed().as_secs_f64();
    Ok(Some(
        metrics
            .into_iter()
            .map(|(m, v)| record(config, cell, m, v, wall))
            .collect(),
    ))
}

/// Data → hyperparameters → score → reverse sampler → truncation, scored by
/// W_p against a held-out sample. Diverged trainings are recorded as
/// `failed` and left out of the fit.
pub fn run_pipeline_rate(config: &ExperimentConfig) -> Result<RateOutcome> {
    config.validate()?;
    let d = intrinsic_dim(config)?;
    let cells = cells(config);
    let results = cells
        .iter()
        .map(|cell| Ok((cell, pipeline_cell(config, cell, d)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::new();
    let mut failed = 0;
    for (cell, result) in results {
        match result {
            Some(rs) => records.extend(rs),
            None => {
                failed += 1;
                records.push(record(config, cell, "failed", 1.0, 0.0));
            }
        }
    }
    summarize(config, "wp", records, failed)
}

/// Minkowski and (p,q)-Wasserstein dimension estimates per sample.
pub fn run_dim_estimate(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let e = &config.experiment;
    let mut records = cells(config)
        .par_iter()
        .map(|cell| {
            let start = Instant::now();
            let data = generate(&config.generator, cell.n, derive_seed(cell.seed, 0))?;
            let grid = match &config.dimension.epsilons {
                Some(g) => g.clone(),
                None => default_epsilon_grid(&data, config.dimension.grid_points)?,
            };
            let mink = fit_minkowski_dimension(&data, &grid)?;
            let wpq = fit_wasserstein_pq_dimension(&data, e.p, e.q, &grid)?;
            let wall = start.elapsed().as_secs_f64();
            Ok([
                ("minkowski", mink.slope),
                ("minkowski_r_squared", mink.r_squared),
                ("wasserstein_pq", wpq.slope),
                ("wasserstein_pq_saturated", if wpq.saturated { 1.0 } else { 0.0 }),
            ]
            .into_iter()
            .map(|(m, v)| record(config, cell, m, v, wall))
            .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?
        .concat();
    sort_records(&mut records);
    Ok(records)
}
