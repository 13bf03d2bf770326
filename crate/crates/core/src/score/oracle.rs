//! Exact score, Hessian and posterior statistics of a noised discrete measure.
//!
//! With X_0 ~ Σ w_i δ_{a_i} and X_t = m X_0 + σ Z, the posterior of X_0 given
//! X_t = x puts mass r_i ∝ w_i exp(−‖x − m a_i‖²/(2σ²)) on a_i, and
//!
//!   ∇ log p_t(x)  = (m E[X_0 | x] − x)/σ²
//!   ∇² log p_t(x) = (m²/σ⁴) Cov(X_0 | x) − I/σ².
//!
//! Responsibilities are computed in the log domain. Expanding the square, the
//! ‖x‖² term is shared by all atoms and drops out of the softmax.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::diffusion::{marginal_at, BetaSchedule, MarginalParams};
use crate::measure::DiscreteMeasure;
use crate::rng::{self, BLOCK};
use crate::score::ScoreFunction;
use crate::{invalid, Error, Result};

/// Score together with the posterior it was computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEvaluation {
    pub score: Vec<f64>,
    pub posterior_mean: Vec<f64>,
    pub posterior_weights: Vec<f64>,
}

/// Exact score of the noised measure, with per-atom quantities cached.
#[derive(Debug, Clone)]
pub struct ExactScore {
    measure: DiscreteMeasure,
    schedule: BetaSchedule,
    log_w: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl ExactScore {
    pub fn new(measure: DiscreteMeasure, schedule: BetaSchedule) -> Self {
        let log_w = measure.weights().iter().map(|w| w.ln()).collect();
        let sq_norms = measure.points().map(|a| a.iter().map(|v| v * v).sum()).collect();
        ExactScore {
            measure,
            schedule,
            log_w,
            sq_norms,
        }
    }

    pub fn measure(&self) -> &DiscreteMeasure {
        &self.measure
    }

    pub fn schedule(&self) -> &BetaSchedule {
        &self.schedule
    }

    fn params(&self, t: f64, x: &[f64]) -> Result<MarginalParams> {
        if !(t > 0.0) {
            return invalid(format!("the score needs t > 0, got {t}"));
        }
        if x.len() != self.measure.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.measure.dim(),
                found: x.len(),
            });
        }
        marginal_at(&self.schedule, t)
    }

    /// Posterior responsibilities into `resp`; returns nothing else.
    fn responsibilities(&self, p: MarginalParams, x: &[f64], resp: &mut [f64]) {
        let s2 = p.sigma2_floored();
        let mut max = f64::NEG_INFINITY;
        for (((r, a), lw), sq) in resp.iter_mut().zip(self.measure.points()).zip(&self.log_w).zip(&self.sq_norms) {
            let dot: f64 = x.iter().zip(a).map(|(u, v)| u * v).sum();
            *r = lw + (p.m * dot - 0.5 * p.m * p.m * sq) / s2;
            max = max.max(*r);
        }
        let mut total = 0.0;
        for r in resp.iter_mut() {
            *r = (*r - max).exp();
            total += *r;
        }
        for r in resp.iter_mut() {
            *r /= total;
        }
    }

    fn posterior_mean(&self, resp: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (r, a) in resp.iter().zip(self.measure.points()) {
            if *r == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(a) {
                *o += r * v;
            }
        }
    }

    pub fn evaluate(&self, x: &[f64], t: f64) -> Result<ScoreEvaluation> {
        let p = self.params(t, x)?;
        let mut resp = vec![0.0; self.measure.len()];
        self.responsibilities(p, x, &mut resp);
        let mut mean = vec![0.0; x.len()];
        self.posterior_mean(&resp, &mut mean);
        let s2 = p.sigma2_floored();
        let score = x.iter().zip(&mean).map(|(xi, mi)| (p.m * mi - xi) / s2).collect();
        Ok(ScoreEvaluation {
            score,
            posterior_mean: mean,
            posterior_weights: resp,
        })
    }

    pub fn hessian(&self, x: &[f64], t: f64) -> Result<DMatrix<f64>> {
        let p = self.params(t, x)?;
        let d = x.len();
        let mut resp = vec![0.0; self.measure.len()];
        self.responsibilities(p, x, &mut resp);
        let mut mean = vec![0.0; d];
        self.posterior_mean(&resp, &mut mean);
        // Centered second moment, accumulated around the posterior mean.
        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut c = vec![0.0; d];
        for (r, a) in resp.iter().zip(self.measure.points()) {
            if *r == 0.0 {
                continue;
            }
            for k in 0..d {
                c[k] = a[k] - mean[k];
            }
            for j in 0..d {
                for k in 0..=j {
                    cov[(j, k)] += r * c[j] * c[k];
                }
            }
        }
        let s2 = p.sigma2_floored();
        let scale = p.m * p.m / (s2 * s2);
        let mut h = DMatrix::<f64>::zeros(d, d);
        for j in 0..d {
            for k in 0..=j {
                h[(j, k)] = scale * cov[(j, k)];
                h[(k, j)] = h[(j, k)];
            }
            h[(j, j)] -= 1.0 / s2;
        }
        Ok(h)
    }
}

impl ScoreFunction for ExactScore {
    fn dim(&self) -> usize {
        self.measure.dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let p = self.params(t, x)?;
        let mut resp = vec![0.0; self.measure.len()];
        self.responsibilities(p, x, &mut resp);
        self.posterior_mean(&resp, out);
        let s2 = p.sigma2_floored();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = (p.m * *o - xi) / s2;
        }
        Ok(())
    }

    fn eval_batch(&self, xs: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        let p = self.params(t, &xs[..d.min(xs.len())])?;
        let s2 = p.sigma2_floored();
        let mut resp = vec![0.0; self.measure.len()];
        for (x, o) in xs.chunks_exact(d).zip(out.chunks_exact_mut(d)) {
            self.responsibilities(p, x, &mut resp);
            self.posterior_mean(&resp, o);
            for (oi, xi) in o.iter_mut().zip(x) {
                *oi = (p.m * *oi - xi) / s2;
            }
        }
        Ok(())
    }
}

/// ∇ log p_t(x) with its posterior statistics.
pub fn score_exact(
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    t: f64,
    x: &[f64],
) -> Result<ScoreEvaluation> {
    ExactScore::new(measure.clone(), schedule.clone()).evaluate(x, t)
}

/// ∇² log p_t(x).
pub fn hessian_exact(
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    t: f64,
    x: &[f64],
) -> Result<DMatrix<f64>> {
    ExactScore::new(measure.clone(), schedule.clone()).hessian(x, t)
}

/// Monte Carlo estimates of both sides of the denoising identity
///
///   E‖s − ∇log p_t‖² = E‖s + Z/σ‖² + E‖∇log p_t‖² − D/σ²
///
/// on one shared sample stream. `stderr` is the standard error of the mean
/// per-sample difference, so the sides should agree within a few stderr.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoisingCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub stderr: f64,
}

impl DenoisingCheck {
    /// |lhs − rhs| in units of stderr.
    pub fn z_score(&self) -> f64 {
        let gap = (self.lhs - self.rhs).abs();
        if gap == 0.0 {
            0.0
        } else {
            gap / self.stderr
        }
    }
}

pub const MIN_IDENTITY_SAMPLES: usize = 10_000;

pub fn verify_denoising_identity(
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    t: f64,
    score_fn: &dyn ScoreFunction,
    mc_samples: usize,
    seed: u64,
) -> Result<DenoisingCheck> {
    if mc_samples < MIN_IDENTITY_SAMPLES {
        return invalid(format!(
            "{mc_samples} samples is below the minimum of {MIN_IDENTITY_SAMPLES}"
        ));
    }
    if score_fn.dim() != measure.dim() {
        return Err(Error::DimensionMismatch {
            expected: measure.dim(),
            found: score_fn.dim(),
        });
    }
    let exact = ExactScore::new(measure.clone(), schedule.clone());
    let p = exact.params(t, &vec![0.0; measure.dim()])?;
    let sigma = p.sigma();
    let d = measure.dim();
    let picker = rand::distr::weighted::WeightedIndex::new(measure.weights())
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let blocks = mc_samples.div_ceil(BLOCK);
    // Per block: (Σ L, Σ R, Σ (L − R), Σ (L − R)²).
    let sums: Vec<Result<[f64; 4]>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            use rand::distr::Distribution;
            let mut rng = rng::stream(seed, b as u64);
            let count = BLOCK.min(mc_samples - b * BLOCK);
            let (mut x, mut z) = (vec![0.0; d], vec![0.0; d]);
            let (mut s, mut g) = (vec![0.0; d], vec![0.0; d]);
            let mut acc = [0.0; 4];
            for _ in 0..count {
                let a = measure.point(picker.sample(&mut rng));
                rng::fill_normal(&mut rng, &mut z);
                for k in 0..d {
                    x[k] = p.m * a[k] + sigma * z[k];
                }
                score_fn.eval_into(&x, t, &mut s)?;
                exact.eval_into(&x, t, &mut g)?;
                let mut lhs = 0.0;
                let mut rhs = -(d as f64) / p.sigma2;
                for k in 0..d {
                    lhs += (s[k] - g[k]).powi(2);
                    rhs += (s[k] + z[k] / sigma).powi(2) + g[k] * g[k];
                }
                let diff = lhs - rhs;
                acc[0] += lhs;
                acc[1] += rhs;
                acc[2] += diff;
                acc[3] += diff * diff;
            }
            Ok(acc)
        })
        .collect();
    let mut total = [0.0; 4];
    for block in sums {
        let block = block?;
        for k in 0..4 {
            total[k] += block[k];
        }
    }
    let n = mc_samples as f64;
    let mean_diff = total[2] / n;
    let var = ((total[3] - n * mean_diff * mean_diff) / (n - 1.0)).max(0.0);
    Ok(DenoisingCheck {
        lhs: total[0] / n,
        rhs: total[1] / n,
        stderr: (var / n).sqrt(),
    })
}
