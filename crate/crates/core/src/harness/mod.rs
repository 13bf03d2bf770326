//! Experiment plumbing: configuration, synthetic generators, rate
//! experiments, the check battery and result emission.
//!
//! Every experiment cell (one n, one repetition) draws its randomness from
//! `derive_seed(master, cell)`, so records do not depend on scheduling.

pub mod checks;
pub mod experiments;
pub mod generators;
pub mod report;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffusion::BetaSchedule;
use crate::score::Optimizer;
use crate::{invalid, Result};

pub use checks::{all_passed, run_identity_checks, CheckOutcome};
pub use experiments::{fit_rate, run_dim_estimate, run_emp_rate, run_pipeline_rate, RateFit, RateOutcome};
pub use generators::{generate, GeneratorSpec};
pub use report::{plot_loglog_svg, plot_rate_svg, sort_records, write_fit_csv, write_records_csv, RunRecord};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    EmpRate,
    PipelineRate,
    DimEstimate,
    IdentityChecks,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::EmpRate => "emp_rate",
            ExperimentKind::PipelineRate => "pipeline_rate",
            ExperimentKind::DimEstimate => "dim_estimate",
            ExperimentKind::IdentityChecks => "identity_checks",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: ExperimentKind,
    /// Label written into every record; defaults to the kind.
    pub id: Option<String>,
    pub seed: u64,
    pub reps: usize,
    pub n_grid: Vec<usize>,
    pub p: f64,
    pub q: f64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            kind: ExperimentKind::EmpRate,
            id: None,
            seed: 0,
            reps: 5,
            n_grid: vec![64, 128, 256, 512, 1024],
            p: 1.0,
            q: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OtSection {
    /// Largest sample size solved exactly; larger ones use entropic OT.
    pub exact_cutoff: usize,
    /// Held-out reference sample size as a multiple of n.
    pub reference_factor: usize,
}

impl Default for OtSection {
    fn default() -> Self {
        OtSection {
            exact_cutoff: 4096,
            reference_factor: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    #[default]
    Exact,
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    /// Constant noise rate β.
    pub beta: f64,
    /// Dimension d fed to the hyperparameter rule; defaults to the
    /// generator's intrinsic dimension.
    pub intrinsic_dim: Option<f64>,
    /// Generated particles per run; defaults to n.
    pub count: Option<usize>,
    pub score: ScoreMode,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            beta: 1.0,
            intrinsic_dim: None,
            count: None,
            score: ScoreMode::Exact,
        }
    }
}

impl SamplerSection {
    pub fn schedule(&self) -> Result<BetaSchedule> {
        BetaSchedule::constant(self.beta)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden: Vec<usize>,
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub mc_per_knot: usize,
    pub weight_bound: f64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            hidden: vec![64, 64],
            steps: 2000,
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            mc_per_knot: 32,
            weight_bound: 10.0,
        }
    }
}

impl TrainingSection {
    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Adam => Optimizer::adam(self.learning_rate),
            OptimizerKind::Sgd => Optimizer::Sgd { lr: self.learning_rate },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimensionSection {
    /// Radii in the default grid from 0.5·diam down to
    /// min(diam·n^{−1/2}, 0.04·diam).
    pub grid_points: usize,
    /// Explicit decreasing radius grid; overrides `grid_points`.
    pub epsilons: Option<Vec<f64>>,
}

impl Default for DimensionSection {
    fn default() -> Self {
        DimensionSection {
            grid_points: 12,
            epsilons: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksSection {
    /// Monte Carlo draws per denoising-identity evaluation.
    pub mc_samples: usize,
    /// Forward times at which the identity is checked.
    pub times: Vec<f64>,
    /// Allowed |lhs − rhs| in units of the Monte Carlo standard error.
    pub z_max: f64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        ChecksSection {
            mc_samples: 100_000,
            times: vec![0.1, 0.5, 1.5],
            z_max: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub generator: GeneratorSpec,
    pub ot: OtSection,
    pub sampler: SamplerSection,
    pub training: TrainingSection,
    pub dimension: DimensionSection,
    pub checks: ChecksSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config fields serialize")
    }

    pub fn id(&self) -> &str {
        self.experiment.id.as_deref().unwrap_or(self.experiment.kind.as_str())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.reps == 0 {
            return invalid("reps must be at least 1");
        }
        if e.n_grid.is_empty() || e.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("n_grid must be nonempty and strictly increasing");
        }
        if e.n_grid[0] == 0 {
            return invalid("n_grid entries must be positive");
        }
        if !(e.p >= 1.0 && e.q > e.p) || !e.q.is_finite() {
            return invalid(format!("need 1 <= p < q, got p = {}, q = {}", e.p, e.q));
        }
        if self.ot.reference_factor == 0 {
            return invalid("reference_factor must be at least 1");
        }
        if !(self.sampler.beta > 0.0) || !self.sampler.beta.is_finite() {
            return invalid("beta must be finite and positive");
        }
        if self.sampler.count == Some(0) {
            return invalid("count must be positive");
        }
        let t = &self.training;
        if !(t.learning_rate >= 0.0) || !(t.weight_bound > 0.0) || t.mc_per_knot == 0 {
            return invalid("training needs learning_rate >= 0, weight_bound > 0 and mc_per_knot >= 1");
        }
        if self.checks.mc_samples == 0 || !(self.checks.z_max > 0.0) {
            return invalid("checks need mc_samples >= 1 and z_max > 0");
        }
        self.generator.validate()
    }
}
