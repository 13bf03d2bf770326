//! Score functions x ↦ ∇ log p_t(x) and the models that approximate them.
//!
//! Times passed to a [`ScoreFunction`] are forward-process times: the score
//! at t is the score of the law of X_t.

pub mod ensemble;
pub mod mlp;
pub mod oracle;
pub mod train;

use crate::Result;

pub use ensemble::{spike_gate, GatedEnsemble};
pub use mlp::Mlp;
pub use oracle::{hessian_exact, score_exact, verify_denoising_identity, DenoisingCheck, ExactScore, ScoreEvaluation};
pub use train::{
    mc_score_matching_loss, train_ensemble, train_shared, McSamples, Optimizer, SharedMlpScore, TrainConfig,
    TrainOutcome,
};

/// Common contract of the exact oracle and the learned models.
pub trait ScoreFunction: Sync {
    /// Ambient dimension D; inputs and outputs have this length.
    fn dim(&self) -> usize;

    /// Writes the score at (x, t) into `out`.
    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    fn eval(&self, x: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.eval_into(x, t, &mut out)?;
        Ok(out)
    }

    /// Scores of a row-major batch of points, all at time t.
    fn eval_batch(&self, xs: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.eval_into(x, t, o)?;
        }
        Ok(())
    }
}

/// The zero vector field.
#[derive(Debug, Clone, Copy)]
pub struct ZeroScore {
    pub dim: usize,
}

impl ScoreFunction for ZeroScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, _x: &[f64], _t: f64, out: &mut [f64]) -> Result<()> {
        out.fill(0.0);
        Ok(())
    }
}

/// Adapts a closure `(x, t, out)` into a [`ScoreFunction`].
pub struct FnScore<F> {
    dim: usize,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, f }
    }
}

impl<F> ScoreFunction for FnScore<F>
where
    F: Fn(&[f64], f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (self.f)(x, t, out);
        Ok(())
    }
}

impl<S: ScoreFunction + ?Sized> ScoreFunction for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).eval_into(x, t, out)
    }

    fn eval_batch(&self, xs: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        (**self).eval_batch(xs, t, out)
    }
}
