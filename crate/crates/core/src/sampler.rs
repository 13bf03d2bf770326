//! Time partition, hyperparameter selection and the exponential-integrator
//! reverse sampler.
//!
//! Forward knots start at the early-stopping time δ₀ and grow by
//! h′ = κ·min(t′, 1): geometrically below 1, uniformly above. The last knot is
//! clamped to the horizon T. Reverse knots are t_i = T − t′_{N−i}, so the
//! sampler runs from t_0 = 0 to t_N = T − δ₀ and at step i evaluates the
//! score at forward time t′_{N−i}.

use rayon::prelude::*;
use statrs::function::gamma::ln_gamma;

use crate::diffusion::{marginal_at, BetaSchedule};
use crate::measure::{DiscreteMeasure, MomentSummary};
use crate::rng::{self, BLOCK};
use crate::score::ScoreFunction;
use crate::{invalid, Error, Result};

/// Knots of the discretization.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    forward: Vec<f64>,
    kappa: f64,
    delta0: f64,
    horizon: f64,
}

pub fn build_partition(horizon: f64, delta0: f64, kappa: f64) -> Result<Partition> {
    if !(delta0 > 0.0) || !horizon.is_finite() {
        return invalid(format!("need finite T and delta0 > 0, got T = {horizon}, delta0 = {delta0}"));
    }
    if delta0 >= horizon {
        return invalid(format!("delta0 = {delta0} must be below T = {horizon}"));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return invalid(format!("kappa = {kappa} must lie in (0, 1]"));
    }
    let mut forward = vec![delta0];
    let mut t = delta0;
    loop {
        let next = t + kappa * t.min(1.0);
        if next >= horizon {
            forward.push(horizon);
            break;
        }
        forward.push(next);
        t = next;
    }
    Ok(Partition {
        forward,
        kappa,
        delta0,
        horizon,
    })
}

impl Partition {
    /// Number of steps N.
    pub fn steps(&self) -> usize {
        self.forward.len() - 1
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// t′_0 = δ₀ < … < t′_N = T.
    pub fn forward_knots(&self) -> &[f64] {
        &self.forward
    }

    /// t_i = T − t′_{N−i}; t_0 = 0 and t_N = T − δ₀.
    pub fn reverse_knots(&self) -> Vec<f64> {
        self.forward.iter().rev().map(|t| self.horizon - t).collect()
    }

    /// h′_i = t′_{i+1} − t′_i.
    pub fn forward_steps(&self) -> Vec<f64> {
        self.forward.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// h_i = t_{i+1} − t_i.
    pub fn reverse_steps(&self) -> Vec<f64> {
        let mut h = self.forward_steps();
        h.reverse();
        h
    }

    /// Forward time at which reverse step i evaluates the score, t′_{N−i}.
    pub fn score_time(&self, i: usize) -> f64 {
        self.forward[self.steps() - i]
    }

    /// log(1/δ₀)/log(1+κ) + T/κ + 1, an upper bound on N.
    pub fn count_bound(&self) -> f64 {
        (1.0 / self.delta0).ln() / self.kappa.ln_1p() + self.horizon / self.kappa + 1.0
    }
}

/// Σ h′_i²/σ⁴_{t′_i} and the bound C·κ·(log(1/δ₀) + T) it must respect.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscretizationSum {
    pub value: f64,
    /// C = (1/log 2 + 1)/(1 − e^{−β̲})².
    pub constant: f64,
    pub bound: f64,
}

pub fn discretization_error_sum(partition: &Partition, schedule: &BetaSchedule) -> Result<DiscretizationSum> {
    let mut value = 0.0;
    for (w, h) in partition.forward.windows(2).zip(partition.forward_steps()) {
        let s2 = marginal_at(schedule, w[0])?.sigma2_floored();
        value += h * h / (s2 * s2);
    }
    let gap = -(-schedule.lower()).exp_m1();
    let constant = (1.0 / std::f64::consts::LN_2 + 1.0) / (gap * gap);
    let bound = constant * partition.kappa * ((1.0 / partition.delta0).ln() + partition.horizon);
    Ok(DiscretizationSum {
        value,
        constant,
        bound,
    })
}

/// Everything the reverse sampler needs besides the score.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub schedule: BetaSchedule,
    pub partition: Partition,
    pub truncation_r: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(schedule: BetaSchedule, partition: Partition, truncation_r: f64, seed: u64) -> Result<Self> {
        if !(truncation_r > 0.0) || !truncation_r.is_finite() {
            return invalid(format!("truncation radius {truncation_r} must be finite and positive"));
        }
        Ok(SamplerConfig {
            schedule,
            partition,
            truncation_r,
            seed,
        })
    }

    /// ∫β over the forward interval [t′_{N−i−1}, t′_{N−i}] traversed by step i.
    pub fn step_integral(&self, i: usize) -> f64 {
        let n = self.partition.steps();
        let f = &self.partition.forward;
        self.schedule.integral(f[n - i - 1], f[n - i])
    }
}

/// Step coefficients (e^A − 1, √(e^{2A} − 1)).
fn step_coefficients(a: f64) -> (f64, f64) {
    (a.exp_m1(), (2.0 * a).exp_m1().sqrt())
}

/// One exponential-integrator step from reverse knot i to i + 1:
/// y′ = y + (e^A − 1)(y + 2 s(y, T − t_i)) + √(e^{2A} − 1)·noise.
pub fn reverse_step(
    y: &[f64],
    i: usize,
    score_fn: &dyn ScoreFunction,
    config: &SamplerConfig,
    noise: &[f64],
) -> Result<Vec<f64>> {
    if i >= config.partition.steps() {
        return invalid(format!("step {i} is past the last step {}", config.partition.steps()));
    }
    if y.len() != score_fn.dim() || noise.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: score_fn.dim(),
            found: if y.len() != score_fn.dim() { y.len() } else { noise.len() },
        });
    }
    let s = score_fn
        .eval(y, config.partition.score_time(i))
        .map_err(|e| Error::Score {
            step: i,
            source: Box::new(e),
        })?;
    let (drift, diffusion) = step_coefficients(config.step_integral(i));
    Ok(y.iter()
        .zip(&s)
        .zip(noise)
        .map(|((yk, sk), zk)| yk + drift * (yk + 2.0 * sk) + diffusion * zk)
        .collect())
}

/// Runs `count` particles from γ_D through every reverse step and returns
/// their uniform empirical measure (before truncation).
///
/// Particles are processed in blocks of [`BLOCK`]; block k draws from stream
/// k of the seed, so the output does not depend on the thread count.
pub fn sample_reverse(score_fn: &dyn ScoreFunction, config: &SamplerConfig, count: usize) -> Result<DiscreteMeasure> {
    if count == 0 {
        return Err(Error::EmptyMeasure);
    }
    let d = score_fn.dim();
    let steps = config.partition.steps();
    let coeffs: Vec<(f64, f64)> = (0..steps).map(|i| step_coefficients(config.step_integral(i))).collect();
    let mut ys = vec![0.0; count * d];
    ys.par_chunks_mut(BLOCK * d)
        .enumerate()
        .try_for_each(|(block, y)| -> Result<()> {
            let mut rng = rng::stream(config.seed, block as u64);
            rng::fill_normal(&mut rng, y);
            let mut s = vec![0.0; y.len()];
            let mut z = vec![0.0; y.len()];
            for (i, &(drift, diffusion)) in coeffs.iter().enumerate() {
                score_fn
                    .eval_batch(y, config.partition.score_time(i), &mut s)
                    .map_err(|e| Error::Score {
                        step: i,
                        source: Box::new(e),
                    })?;
                rng::fill_normal(&mut rng, &mut z);
                for ((yk, sk), zk) in y.iter_mut().zip(&s).zip(&z) {
                    *yk += drift * (*yk + 2.0 * sk) + diffusion * zk;
                }
            }
            Ok(())
        })?;
    DiscreteMeasure::uniform_flat(d, ys)
}

/// Maps every atom with ‖y‖_∞ > R to the origin; weights are kept.
pub fn truncate(measure: &DiscreteMeasure, radius: f64) -> Result<DiscreteMeasure> {
    if !(radius > 0.0) {
        return invalid(format!("truncation radius {radius} must be positive"));
    }
    Ok(measure.map_points(|src, dst| {
        if src.iter().any(|v| v.abs() > radius) {
            dst.fill(0.0);
        } else {
            dst.copy_from_slice(src);
        }
    }))
}

/// E‖G‖₂^q for G ~ N(0, I_D): 2^{q/2} Γ((D+q)/2)/Γ(D/2).
pub fn gaussian_moment_powered(dim: usize, q: f64) -> f64 {
    let d = dim as f64;
    (0.5 * q * std::f64::consts::LN_2 + ln_gamma(0.5 * (d + q)) - ln_gamma(0.5 * d)).exp()
}

/// Sampler hyperparameters tied to the sample size and data regularity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperParams {
    pub horizon: f64,
    pub truncation_r: f64,
    pub delta0: f64,
    pub kappa: f64,
    /// Intrinsic dimension proxy.
    pub d: f64,
    pub p: f64,
    pub q: f64,
    pub n: usize,
    /// M_q^q(data) + M_q^q(γ_D).
    pub moment_sum: f64,
}

impl HyperParams {
    pub fn partition(&self) -> Result<Partition> {
        build_partition(self.horizon, self.delta0, self.kappa)
    }

    /// 2^{(q−1)/p} (M_q^q + M_q^q(γ_D))^{1/p} R^{−(q−p)/p}, the mass-moving cost
    /// of truncation at R. Equals n^{−1/(d p²)} at the selected R.
    pub fn truncation_tail_bound(&self) -> f64 {
        let (p, q) = (self.p, self.q);
        2f64.powf((q - 1.0) / p) * self.moment_sum.powf(1.0 / p) * self.truncation_r.powf(-(q - p) / p)
    }
}

/// δ₀ = n^{−2/d}, κ = n^{−2(1+p(q−p))/(dp(q−p))},
/// R = 2^{(q−1)/(q−p)} n^{1/(dp(q−p))} (M_q^q + M_q^q(γ_D))^{1/(q−p)} and T at
/// the lower bound
///
///   (p/β̲)·[ (1+p(q−p))/(dp(q−p))·log n + ½ log D + log(M_q^q + M_q^q(γ_D))/(q−p)
///           + log(D + M₂²)/(2p) + (q−1)/(q−p)·log 2 ].
pub fn select_hyperparams(
    n: usize,
    d: f64,
    p: f64,
    q: f64,
    moments: &MomentSummary,
    dim: usize,
    schedule: &BetaSchedule,
) -> Result<HyperParams> {
    if n < 2 {
        return invalid(format!("sample size n = {n} must be at least 2"));
    }
    if !(p > 0.0 && p < q && q.is_finite()) {
        return invalid(format!("need 0 < p < q < inf, got p = {p}, q = {q}"));
    }
    if !(d > 2.0 * p) {
        return invalid(format!(
            "dimension d = {d} must exceed 2p = {}: the Wasserstein dimension only takes values s > 2p",
            2.0 * p
        ));
    }
    if (moments.q - q).abs() > 1e-12 {
        return invalid(format!("moment summary has order {} but q = {q}", moments.q));
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let gap = q - p;
    let rate = (1.0 + p * gap) / (d * p * gap);
    let moment_sum = moments.powered() + gaussian_moment_powered(dim, q);
    let delta0 = (-2.0 / d * ln_n).exp();
    let kappa = (-2.0 * rate * ln_n).exp().min(1.0);
    let truncation_r = ((q - 1.0) / gap * std::f64::consts::LN_2 + ln_n / (d * p * gap) + moment_sum.ln() / gap).exp();
    let bracket = rate * ln_n
        + 0.5 * (dim as f64).ln()
        + moment_sum.ln() / gap
        + (dim as f64 + moments.second).ln() / (2.0 * p)
        + (q - 1.0) / gap * std::f64::consts::LN_2;
    let horizon = p / schedule.lower() * bracket;
    Ok(HyperParams {
        horizon,
        truncation_r,
        delta0,
        kappa,
        d,
        p,
        q,
        n,
        moment_sum,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_partition() {
        let part = build_partition(2.0, 1.0, 1.0).unwrap();
        assert_eq!(part.forward_knots(), &[1.0, 2.0]);
        assert_eq!(part.reverse_knots(), vec![0.0, 1.0]);
        assert_eq!(part.steps(), 1);
        assert_eq!(part.score_time(0), 2.0);
    }

    #[test]
    fn partition_guards() {
        assert!(build_partition(1.0, 1.0, 0.5).is_err());
        assert!(build_partition(2.0, 0.1, 0.0).is_err());
        assert!(build_partition(2.0, 0.1, 1.5).is_err());
    }

    #[test]
    fn step_coefficients_vanish_for_empty_step() {
        assert_eq!(step_coefficients(0.0), (0.0, 0.0));
    }

    #[test]
    fn chi_moments() {
        // E‖G‖² = D, E‖G‖⁴ = D(D + 2).
        for dim in 1..6 {
            let d = dim as f64;
            assert!((gaussian_moment_powered(dim, 2.0) - d).abs() < 1e-12 * d);
            assert!((gaussian_moment_powered(dim, 4.0) - d * (d + 2.0)).abs() < 1e-11 * d * d);
        }
    }
}
