//! # scorelab
//!
//! A desk-scale laboratory for score-based diffusion models trained on
//! empirical measures.
//!
//! The crate covers the whole chain from data to generated samples and the
//! yardsticks used to judge them:
//!
//! | Module | Contents |
//! |--------|----------|
//! | [`measure`] | weighted point clouds, moments, CSV layout |
//! | [`ot`] | exact, brute-force, entropic and multiscale Wasserstein-p |
//! | [`dimension`] | covering/packing numbers, Minkowski and (p,q)-Wasserstein dimension fits |
//! | [`diffusion`] | time-rescaled OU forward process, mixture densities, KL bounds |
//! | [`score`] | exact mixture score/Hessian, MLP and gated-ensemble score models, training |
//! | [`sampler`] | partition scheme, exponential-integrator reverse sampler, truncation |
//! | [`harness`] | experiment configs, generators, rate experiments, check battery |
//!
//! Everything is deterministic given an explicit seed. Parallel work is split
//! into fixed-size blocks with one RNG stream per block, so results do not
//! depend on the number of worker threads.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use thiserror::Error;

pub mod diffusion;
pub mod dimension;
pub mod fit;
pub mod harness;
pub mod measure;
pub mod ot;
pub mod rng;
pub mod sampler;
pub mod score;

pub use diffusion::{BetaSchedule, MarginalParams};
pub use measure::{DiscreteMeasure, MomentSummary};
pub use ot::CouplingPlan;
pub use sampler::{HyperParams, Partition, SamplerConfig};
pub use score::ScoreFunction;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("measure has no atoms")]
    EmptyMeasure,

    #[error("instance of size {size} exceeds the limit {max}")]
    TooLarge { size: usize, max: usize },

    #[error("point {index} lies outside the unit cube")]
    OutsideUnitCube { index: usize },

    #[error("t = {t} is below the validity window t >= {min_t}")]
    ValidityWindow { t: f64, min_t: f64 },

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("training diverged at step {step} (loss {loss})")]
    Diverged { step: usize, loss: f64 },

    #[error("score evaluation failed at reverse step {step}: {source}")]
    Score {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Config(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
