use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use scorelab::dimension::{
    covering_profile, default_epsilon_grid, fit_minkowski_dimension, fit_wasserstein_pq_dimension, Norm,
};
use scorelab::harness::{
    all_passed, generate, plot_loglog_svg, plot_rate_svg, run_emp_rate, run_identity_checks,
    run_pipeline_rate, sort_records, write_fit_csv, write_records_csv, ExperimentConfig, OptimizerKind, RateFit,
    RateOutcome, RunRecord, ScoreMode,
};
use scorelab::ot::wasserstein_p_auto;
use scorelab::rng::derive_seed;
use scorelab::sampler::select_hyperparams;
use scorelab::score::{train_shared, SharedMlpScore, TrainConfig};
use scorelab::DiscreteMeasure;

use crate::{Command, Common, OptimizerArg, ScoreArg};

/// Returns whether every executed check passed.
pub fn run(command: Command) -> Result<bool> {
    match command {
        Command::Wp { first, second, common } => wp(&first, &second, &common),
        Command::Dim { measure, common } => dim(&measure, &common),
        Command::EmpRate { common } => rate(&common, false),
        Command::PipelineRate { common } => rate(&common, true),
        Command::TrainScore { data, n, common } => train_score(data.as_deref(), n, &common),
        Command::Checks { common } => checks(&common),
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_path(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut config, common);
    Ok(config)
}

fn apply_overrides(config: &mut ExperimentConfig, c: &Common) {
    let e = &mut config.experiment;
    set(&mut e.seed, c.seed);
    if let Some(id) = &c.id {
        e.id = Some(id.clone());
    }
    set(&mut e.reps, c.reps);
    set(&mut e.n_grid, c.n_grid.clone());
    set(&mut e.p, c.p);
    set(&mut e.q, c.q);
    set(&mut config.ot.exact_cutoff, c.exact_cutoff);
    set(&mut config.ot.reference_factor, c.reference_factor);
    let s = &mut config.sampler;
    set(&mut s.beta, c.beta);
    if c.intrinsic_dim.is_some() {
        s.intrinsic_dim = c.intrinsic_dim;
    }
    if c.count.is_some() {
        s.count = c.count;
    }
    if let Some(score) = c.score {
        s.score = match score {
            ScoreArg::Exact => ScoreMode::Exact,
            ScoreArg::Trained => ScoreMode::Trained,
        };
    }
    let t = &mut config.training;
    set(&mut t.hidden, c.hidden.clone());
    set(&mut t.steps, c.steps);
    if let Some(opt) = c.optimizer {
        t.optimizer = match opt {
            OptimizerArg::Adam => OptimizerKind::Adam,
            OptimizerArg::Sgd => OptimizerKind::Sgd,
        };
    }
    set(&mut t.learning_rate, c.learning_rate);
    set(&mut t.mc_per_knot, c.mc_per_knot);
    set(&mut t.weight_bound, c.weight_bound);
    set(&mut config.dimension.grid_points, c.grid_points);
    set(&mut config.checks.mc_samples, c.mc_samples);
    set(&mut config.checks.z_max, c.z_max);
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn init_threads(common: &Common) -> Result<()> {
    if let Some(threads) = common.threads {
        if threads == 0 {
            bail!("--threads must be positive");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

/// Validates the config, creates the output directory and echoes the
/// effective config into it.
fn prepare(common: &Common, config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    prepare_unchecked(common, config)
}

fn prepare_unchecked(common: &Common, config: &ExperimentConfig) -> Result<PathBuf> {
    init_threads(common)?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    fs::write(common.out.join("config.toml"), config.to_toml_string())?;
    Ok(common.out.clone())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_records(out: &Path, records: &mut [RunRecord]) -> Result<()> {
    sort_records(records);
    write_records_csv(records, create(&out.join("records.csv"))?)?;
    Ok(())
}

fn read_measure(path: &Path) -> Result<DiscreteMeasure> {
    DiscreteMeasure::read_csv_path(path).with_context(|| format!("reading {}", path.display()))
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned())
}

fn wp(first: &Path, second: &Path, common: &Common) -> Result<bool> {
    let config = load_config(common)?;
    let out = prepare(common, &config)?;
    let a = read_measure(first)?;
    let b = read_measure(second)?;
    let start = Instant::now();
    let value = wasserstein_p_auto(&a, &b, config.experiment.p, config.ot.exact_cutoff)?;
    let mut records = vec![RunRecord {
        experiment: common.id.clone().unwrap_or_else(|| "wp".into()),
        generator: format!("{}|{}", file_label(first), file_label(second)),
        n: a.len(),
        rep: None,
        seed: config.experiment.seed,
        metric: "wp".into(),
        value,
        wall_time: start.elapsed().as_secs_f64(),
    }];
    write_records(&out, &mut records)?;
    println!("{value}");
    Ok(true)
}

fn dim(path: &Path, common: &Common) -> Result<bool> {
    let config = load_config(common)?;
    // Dimension estimates accept 0 < p < 1, which rate experiments reject,
    // so the estimator validates (p, q) itself.
    let (p, q) = (config.experiment.p, config.experiment.q);
    let out = prepare_unchecked(common, &config)?;
    let measure = read_measure(path)?;
    let start = Instant::now();
    let grid = match &config.dimension.epsilons {
        Some(g) => g.clone(),
        None => default_epsilon_grid(&measure, config.dimension.grid_points)?,
    };
    let profile = covering_profile(&measure, &grid, 0.0, Norm::Linf)?;
    profile.write_csv(create(&out.join("profile.csv"))?)?;
    let mink = fit_minkowski_dimension(&measure, &grid)?;
    let wpq = fit_wasserstein_pq_dimension(&measure, p, q, &grid)?;
    fs::write(out.join("minkowski.json"), mink.to_json())?;
    fs::write(out.join("wasserstein_pq.json"), wpq.to_json())?;
    let wall = start.elapsed().as_secs_f64();
    let record = |metric: &str, value: f64| RunRecord {
        experiment: common.id.clone().unwrap_or_else(|| "dim".into()),
        generator: file_label(path),
        n: measure.len(),
        rep: None,
        seed: config.experiment.seed,
        metric: metric.into(),
        value,
        wall_time: wall,
    };
    let mut records = vec![
        record("minkowski", mink.slope),
        record("minkowski_r_squared", mink.r_squared),
        record("wasserstein_pq", wpq.slope),
        record("wasserstein_pq_saturated", if wpq.saturated { 1.0 } else { 0.0 }),
    ];
    write_records(&out, &mut records)?;
    let points: Vec<(f64, f64)> = profile
        .epsilons
        .iter()
        .zip(&profile.counts)
        .map(|(&e, &c)| (1.0 / e, c as f64))
        .collect();
    let fit = RateFit {
        slope: mink.slope,
        intercept: mink.intercept,
        stderr_slope: f64::NAN,
        n_points: points.len(),
    };
    plot_loglog_svg(
        out.join("dim.svg"),
        &format!("covering numbers of {}", file_label(path)),
        ("1/epsilon", "covering number"),
        &points,
        Some(&fit),
    )?;
    println!("{}", mink.to_json());
    println!("{}", wpq.to_json());
    Ok(true)
}

fn emit_rate(out: &Path, config: &ExperimentConfig, mut outcome: RateOutcome) -> Result<()> {
    write_records(out, &mut outcome.records)?;
    write_fit_csv(outcome.fit.as_ref(), create(&out.join("fit.csv"))?)?;
    let points: Vec<(f64, f64)> = outcome.means.iter().map(|&(n, v)| (n as f64, v)).collect();
    let title = format!("{} {} on {}", config.id(), outcome.metric, config.generator.label());
    plot_rate_svg(out.join(format!("{}.svg", config.id())), &title, &points, outcome.fit.as_ref())?;
    for (n, v) in &outcome.means {
        println!("n = {n:>6}  mean {} = {v:.6e}", outcome.metric);
    }
    match &outcome.fit {
        Some(f) => println!("slope {:.4} (stderr {:.4}) over {} points", f.slope, f.stderr_slope, f.n_points),
        None => println!("no rate fit: means are not all positive or fewer than 3 sizes"),
    }
    if outcome.failed_runs > 0 {
        println!("{} runs diverged during training", outcome.failed_runs);
    }
    Ok(())
}

fn rate(common: &Common, pipeline: bool) -> Result<bool> {
    let mut config = load_config(common)?;
    if config.experiment.id.is_none() {
        config.experiment.id = Some(if pipeline { "pipeline_rate" } else { "emp_rate" }.into());
    }
    let out = prepare(common, &config)?;
    let outcome = if pipeline {
        run_pipeline_rate(&config)?
    } else {
        run_emp_rate(&config)?
    };
    emit_rate(&out, &config, outcome)?;
    Ok(true)
}

fn train_score(data: Option<&Path>, n: usize, common: &Common) -> Result<bool> {
    let config = load_config(common)?;
    let out = prepare(common, &config)?;
    let e = &config.experiment;
    let seed = e.seed;
    let (measure, label) = match data {
        Some(path) => (read_measure(path)?, file_label(path)),
        None => (generate(&config.generator, n, derive_seed(seed, 0))?, config.generator.label()),
    };
    let d = match config.sampler.intrinsic_dim {
        Some(d) => d,
        None if data.is_none() => match config.generator.intrinsic_dim() {
            Some(d) => d,
            None => bail!("set --intrinsic-dim for this generator"),
        },
        None => bail!("--intrinsic-dim is required with --data"),
    };
    let start = Instant::now();
    let schedule = config.sampler.schedule()?;
    let hp = select_hyperparams(measure.len(), d, e.p, e.q, &measure.moments(e.q)?, measure.dim(), &schedule)?;
    let partition = hp.partition()?;
    let t = &config.training;
    let model = SharedMlpScore::init(measure.dim(), &t.hidden, t.weight_bound, schedule, derive_seed(seed, 2))?;
    let train = TrainConfig::uniform(partition, t.mc_per_knot, t.optimizer(), t.steps, derive_seed(seed, 3));
    let outcome = train_shared(model, &measure, &train)?;
    let wall = start.elapsed().as_secs_f64();
    outcome.model.net.write_path(out.join("model.txt"))?;
    outcome.write_trace(create(&out.join("loss.csv"))?)?;
    let final_loss = *outcome.trace.last().unwrap_or(&f64::NAN);
    let record = |metric: &str, value: f64| RunRecord {
        experiment: common.id.clone().unwrap_or_else(|| "train_score".into()),
        generator: label.clone(),
        n: measure.len(),
        rep: None,
        seed,
        metric: metric.into(),
        value,
        wall_time: wall,
    };
    let mut records = vec![
        record("initial_loss", outcome.trace[0]),
        record("final_loss", final_loss),
        record("steps", t.steps as f64),
    ];
    write_records(&out, &mut records)?;
    let points: Vec<(f64, f64)> = outcome
        .trace
        .iter()
        .enumerate()
        .map(|(step, &loss)| ((step + 1) as f64, loss))
        .collect();
    plot_loglog_svg(out.join("train_score.svg"), "training loss", ("step + 1", "loss"), &points, None)?;
    println!("final loss {final_loss:.6e} after {} steps", t.steps);
    Ok(true)
}

fn checks(common: &Common) -> Result<bool> {
    let mut config = load_config(common)?;
    if config.experiment.id.is_none() {
        config.experiment.id = Some("checks".into());
    }
    let out = prepare(common, &config)?;
    let outcomes = run_identity_checks(&config)?;
    let mut records: Vec<RunRecord> = outcomes.iter().flat_map(|o| o.records(&config)).collect();
    write_records(&out, &mut records)?;
    for o in &outcomes {
        let status = match o.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{status} {} measured {:.3e} threshold {:.3e}", o.name, o.measured, o.threshold);
    }
    let passed = all_passed(&outcomes);
    let failed = outcomes.iter().filter(|o| o.failed()).count();
    println!("{} checks, {failed} failed", outcomes.len());
    Ok(passed)
}
