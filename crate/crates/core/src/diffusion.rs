//! Time-rescaled Ornstein–Uhlenbeck forward process
//! dX_t = −β_t X_t dt + √(2β_t) dW_t.
//!
//! Conditioned on X_s, X_t is Gaussian with mean m·X_s and variance σ²·I,
//! where m = exp(−∫ₛᵗβ) and σ² = 1 − m². Started from a discrete measure the
//! marginal is a Gaussian mixture with one component per atom.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rayon::prelude::*;

use crate::measure::DiscreteMeasure;
use crate::rng::{self, BLOCK};
use crate::{invalid, Error, Result};

/// Floor applied to σ² wherever it divides.
pub const SIGMA2_FLOOR: f64 = 1e-12;

const SIMPSON_TOL: f64 = 1e-10;
const SIMPSON_MAX_DEPTH: u32 = 40;

/// Noise schedule t ↦ β_t, bounded between `lower()` and `upper()`.
#[derive(Debug, Clone, PartialEq)]
pub enum BetaSchedule {
    /// β_t ≡ rate.
    Constant { rate: f64 },
    /// Linear from `start` at t = 0 to `end` at t = `horizon`, then held at `end`.
    Affine { start: f64, end: f64, horizon: f64 },
    /// Monotone piecewise-cubic Hermite interpolation of (times, values), flat
    /// before the first and after the last knot.
    Tabulated(Tabulated),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tabulated {
    times: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        BetaSchedule::Constant { rate: 1.0 }
    }
}

fn check_rate(v: f64, what: &str) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        invalid(format!("{what} = {v} must be finite and positive"))
    }
}

impl BetaSchedule {
    pub fn constant(rate: f64) -> Result<Self> {
        check_rate(rate, "rate")?;
        Ok(BetaSchedule::Constant { rate })
    }

    pub fn affine(start: f64, end: f64, horizon: f64) -> Result<Self> {
        check_rate(start, "start")?;
        check_rate(end, "end")?;
        check_rate(horizon, "horizon")?;
        Ok(BetaSchedule::Affine {
            start,
            end,
            horizon,
        })
    }

    /// PCHIP through the knots with zero slope at both ends, so the schedule
    /// is C¹ on [0, ∞) and stays within [min value, max value].
    pub fn tabulated(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() || times.len() < 2 {
            return invalid("tabulated schedule needs at least two (time, value) pairs");
        }
        if times[0] != 0.0 {
            return invalid("tabulated schedule must start at t = 0");
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return invalid("tabulated times must be finite and strictly increasing");
        }
        for &v in &values {
            check_rate(v, "tabulated value")?;
        }
        let k = times.len();
        let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..k - 1).map(|i| (values[i + 1] - values[i]) / h[i]).collect();
        let mut slopes = vec![0.0; k];
        for i in 1..k - 1 {
            let (d0, d1) = (delta[i - 1], delta[i]);
            if d0 * d1 > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                slopes[i] = (w1 + w2) / (w1 / d0 + w2 / d1);
            }
        }
        Ok(BetaSchedule::Tabulated(Tabulated {
            times,
            values,
            slopes,
        }))
    }

    /// β̲
    pub fn lower(&self) -> f64 {
        match self {
            BetaSchedule::Constant { rate } => *rate,
            BetaSchedule::Affine { start, end, .. } => start.min(*end),
            BetaSchedule::Tabulated(tab) => tab.values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }

    /// β̄
    pub fn upper(&self) -> f64 {
        match self {
            BetaSchedule::Constant { rate } => *rate,
            BetaSchedule::Affine { start, end, .. } => start.max(*end),
            BetaSchedule::Tabulated(tab) => tab.values.iter().copied().fold(0.0, f64::max),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            BetaSchedule::Constant { .. } => "constant",
            BetaSchedule::Affine { .. } => "affine",
            BetaSchedule::Tabulated(_) => "tabulated",
        }
    }

    /// β_t; t is clamped at 0.
    pub fn beta(&self, t: f64) -> f64 {
        let t = t.max(0.0);
        match self {
            BetaSchedule::Constant { rate } => *rate,
            BetaSchedule::Affine {
                start,
                end,
                horizon,
            } => {
                if t >= *horizon {
                    *end
                } else {
                    start + (end - start) * t / horizon
                }
            }
            BetaSchedule::Tabulated(tab) => tab.eval(t),
        }
    }

    /// ∫ₛᵗ β_τ dτ for 0 ≤ s ≤ t.
    pub fn integral(&self, s: f64, t: f64) -> f64 {
        debug_assert!(s <= t);
        match self {
            BetaSchedule::Constant { rate } => rate * (t - s),
            BetaSchedule::Affine { .. } => self.antiderivative(t) - self.antiderivative(s),
            BetaSchedule::Tabulated(tab) => tab.integral(s, t),
        }
    }

    fn antiderivative(&self, t: f64) -> f64 {
        match self {
            BetaSchedule::Affine {
                start,
                end,
                horizon,
            } => {
                let slope = (end - start) / horizon;
                if t <= *horizon {
                    start * t + 0.5 * slope * t * t
                } else {
                    start * horizon + 0.5 * slope * horizon * horizon + end * (t - horizon)
                }
            }
            _ => unreachable!("closed form only for the affine schedule"),
        }
    }

    /// Extremes of β and of its one-sided finite-difference slope jumps on a
    /// uniform grid of `points` times in [0, horizon].
    pub fn audit(&self, horizon: f64, points: usize) -> ScheduleAudit {
        let points = points.max(3);
        let dt = horizon / (points - 1) as f64;
        let h = dt * 1e-3;
        let mut audit = ScheduleAudit {
            min_beta: f64::INFINITY,
            max_beta: f64::NEG_INFINITY,
            max_slope_jump: 0.0,
        };
        for k in 0..points {
            let t = k as f64 * dt;
            let b = self.beta(t);
            audit.min_beta = audit.min_beta.min(b);
            audit.max_beta = audit.max_beta.max(b);
            if t >= h {
                let left = (b - self.beta(t - h)) / h;
                let right = (self.beta(t + h) - b) / h;
                audit.max_slope_jump = audit.max_slope_jump.max((right - left).abs());
            }
        }
        audit
    }
}

/// Result of [`BetaSchedule::audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleAudit {
    pub min_beta: f64,
    pub max_beta: f64,
    pub max_slope_jump: f64,
}

impl Tabulated {
    fn segment(&self, t: f64) -> usize {
        let k = self.times.len();
        match self.times.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i.min(k - 2),
            Err(i) => i.saturating_sub(1).min(k - 2),
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let last = *self.times.last().unwrap();
        if t >= last {
            return *self.values.last().unwrap();
        }
        let i = self.segment(t);
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let u = (t - t0) / h;
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        h00 * self.values[i]
            + h10 * h * self.slopes[i]
            + h01 * self.values[i + 1]
            + h11 * h * self.slopes[i + 1]
    }

    fn integral(&self, s: f64, t: f64) -> f64 {
        let last = *self.times.last().unwrap();
        let mut total = 0.0;
        // Split at knots so every quadrature piece is a single smooth cubic.
        let mut breaks = vec![s];
        breaks.extend(self.times.iter().copied().filter(|&x| x > s && x < t));
        breaks.push(t);
        for w in breaks.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a >= last {
                total += (b - a) * self.values.last().unwrap();
            } else {
                let f = |x: f64| self.eval(x);
                let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
                total += adaptive_simpson(&f, a, b, fa, fm, fb, SIMPSON_TOL, SIMPSON_MAX_DEPTH);
            }
        }
        total
    }
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let err = left + right - whole;
    if depth == 0 || err.abs() <= 15.0 * tol {
        left + right + err / 15.0
    } else {
        adaptive_simpson(f, a, m, fa, flm, fm, 0.5 * tol, depth - 1)
            + adaptive_simpson(f, m, b, fm, frm, fb, 0.5 * tol, depth - 1)
    }
}

/// Mean scale m and variance σ² of X_t given X_s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalParams {
    pub m: f64,
    pub sigma2: f64,
}

impl MarginalParams {
    /// From the integrated rate A = ∫β; σ² = −expm1(−2A) keeps full relative
    /// precision for small A.
    pub fn from_integral(a: f64) -> Self {
        MarginalParams {
            m: (-a).exp(),
            sigma2: -(-2.0 * a).exp_m1(),
        }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma2.sqrt()
    }

    /// σ² floored at [`SIGMA2_FLOOR`], for use as a divisor.
    pub fn sigma2_floored(&self) -> f64 {
        self.sigma2.max(SIGMA2_FLOOR)
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        invalid(format!("time {t} must be finite and non-negative"))
    }
}

/// Parameters of X_t | X_s for s ≤ t.
pub fn marginal_params(schedule: &BetaSchedule, s: f64, t: f64) -> Result<MarginalParams> {
    check_time(s)?;
    check_time(t)?;
    if s > t {
        return invalid(format!("s = {s} exceeds t = {t}"));
    }
    Ok(MarginalParams::from_integral(schedule.integral(s, t)))
}

/// Parameters of X_t | X_0.
pub fn marginal_at(schedule: &BetaSchedule, t: f64) -> Result<MarginalParams> {
    marginal_params(schedule, 0.0, t)
}

/// `count` draws of X_t with X_0 ~ `measure`, as a flat row-major buffer.
///
/// Particles are generated in blocks of [`BLOCK`], block k using stream k of
/// `seed`, so the output does not depend on the thread count.
pub fn sample_forward_flat(
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    t: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let params = marginal_at(schedule, t)?;
    let dim = measure.dim();
    let picker = WeightedIndex::new(measure.weights()).map_err(|e| Error::InvalidInput(e.to_string()))?;
    let sigma = params.sigma();
    let mut out = vec![0.0; count * dim];
    out.par_chunks_mut(BLOCK * dim).enumerate().for_each(|(block, chunk)| {
        let mut rng = rng::stream(seed, block as u64);
        for row in chunk.chunks_exact_mut(dim) {
            let atom = measure.point(picker.sample(&mut rng));
            for (v, &x0) in row.iter_mut().zip(atom) {
                *v = params.m * x0 + sigma * rng::normal(&mut rng);
            }
        }
    });
    Ok(out)
}

/// `count` draws of X_t with X_0 ~ `measure`. See [`sample_forward_flat`].
pub fn sample_forward(
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    t: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let flat = sample_forward_flat(measure, schedule, t, count, seed)?;
    Ok(flat.chunks_exact(measure.dim()).map(<[f64]>::to_vec).collect())
}

/// KL(N(mean, σ²·I_D) ‖ N(0, I_D)).
pub fn gaussian_kl(mean: &[f64], sigma2: f64, dim: usize) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return invalid(format!("sigma2 = {sigma2} must be positive"));
    }
    if mean.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: mean.len(),
        });
    }
    let d = dim as f64;
    let norm2: f64 = mean.iter().map(|v| v * v).sum();
    Ok(0.5 * (d * sigma2 - d - d * sigma2.ln() + norm2))
}

/// exp(−2β̲t)·(D + M₂²(measure)), an upper bound on KL(law of X_t ‖ γ_D)
/// valid for t ≥ log 2 / β̄.
pub fn kl_bound_to_gaussian(measure: &DiscreteMeasure, schedule: &BetaSchedule, t: f64) -> Result<f64> {
    let min_t = std::f64::consts::LN_2 / schedule.upper();
    if !(t >= min_t) {
        return Err(Error::ValidityWindow { t, min_t });
    }
    let d = measure.dim() as f64;
    Ok((-2.0 * schedule.lower() * t).exp() * (d + measure.second_moment()))
}

/// Numerically stable log Σ exp(v).
pub fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// log of the density of X_t at x when X_0 ~ `measure`; t > 0.
pub fn mixture_log_density(
    measure: &DiscreteMeasure,
    schedule: &BetaSchedule,
    t: f64,
    x: &[f64],
) -> Result<f64> {
    if !(t > 0.0) {
        return invalid(format!("density of X_t needs t > 0, got {t}"));
    }
    if x.len() != measure.dim() {
        return Err(Error::DimensionMismatch {
            expected: measure.dim(),
            found: x.len(),
        });
    }
    let params = marginal_at(schedule, t)?;
    let s2 = params.sigma2_floored();
    let terms: Vec<f64> = measure
        .points()
        .zip(measure.weights())
        .map(|(a, &w)| {
            let d2: f64 = x.iter().zip(a).map(|(xi, ai)| (xi - params.m * ai).powi(2)).sum();
            w.ln() - d2 / (2.0 * s2)
        })
        .collect();
    let d = measure.dim() as f64;
    Ok(log_sum_exp(&terms) - 0.5 * d * (2.0 * std::f64::consts::PI * s2).ln())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_schedule_closed_form() {
        let s = BetaSchedule::default();
        let p = marginal_params(&s, 0.0, std::f64::consts::LN_2).unwrap();
        assert!((p.m - 0.5).abs() < 1e-15);
        assert!((p.sigma2 - 0.75).abs() < 1e-15);
        let p = marginal_params(&s, 1.3, 1.3).unwrap();
        assert_eq!((p.m, p.sigma2), (1.0, 0.0));
        assert!(marginal_params(&s, 2.0, 1.0).is_err());
    }

    #[test]
    fn affine_antiderivative_is_continuous_at_horizon() {
        let s = BetaSchedule::affine(0.5, 2.0, 3.0).unwrap();
        let below = s.integral(0.0, 3.0 - 1e-12);
        let above = s.integral(0.0, 3.0 + 1e-12);
        assert!((below - above).abs() < 1e-10);
        assert!((s.integral(0.0, 3.0) - (0.5 * 3.0 + 0.25 * 9.0)).abs() < 1e-12);
    }

    #[test]
    fn pchip_reproduces_knots_and_stays_in_range() {
        let s = BetaSchedule::tabulated(vec![0.0, 1.0, 2.0, 4.0], vec![0.5, 2.0, 1.0, 1.5]).unwrap();
        for (t, v) in [(0.0, 0.5), (1.0, 2.0), (2.0, 1.0), (4.0, 1.5), (9.0, 1.5)] {
            assert!((s.beta(t) - v).abs() < 1e-14);
        }
        let audit = s.audit(6.0, 5000);
        assert!(audit.min_beta >= 0.5 - 1e-12 && audit.max_beta <= 2.0 + 1e-12);
    }

    #[test]
    fn simpson_on_cubic_is_exact() {
        let f = |x: f64| x * x * x - 2.0 * x;
        let v = adaptive_simpson(&f, 0.0, 2.0, f(0.0), f(1.0), f(2.0), 1e-12, 20);
        assert!((v - 0.0).abs() < 1e-14);
    }

    #[test]
    fn log_sum_exp_extremes() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-12);
    }
}
