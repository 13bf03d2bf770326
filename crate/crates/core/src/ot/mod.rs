//! Wasserstein-p distances between discrete measures.
//!
//! Costs are ‖x − y‖₂^p. The exact solver dispatches on the shape of the
//! problem: equal-size uniform measures become a linear assignment, anything
//! else a min-cost flow. [`wasserstein_p_bruteforce`] enumerates permutations
//! and exists to cross-check the exact solver on tiny instances.

pub mod assignment;
pub mod entropic;
pub mod flow;
pub mod multiscale;

use crate::measure::{check_same_dim, DiscreteMeasure};
use crate::{invalid, Error, Result};

pub use multiscale::MultiscaleBound;

/// Default entropic regularization as a multiple of the median pairwise cost.
pub const ENTROPIC_REG_FACTOR: f64 = 1e-3;
pub const ENTROPIC_MAX_ITERS: usize = 10_000;
pub const ENTROPIC_TOL: f64 = 1e-9;

const BRUTEFORCE_MAX: usize = 8;

/// A transport plan between two discrete measures.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingPlan {
    /// (source index, target index, mass), sorted by (source, target).
    pub pairs: Vec<(usize, usize, f64)>,
    /// Σ mass · ‖x − y‖₂^p
    pub cost_p: f64,
}

impl CouplingPlan {
    /// Largest deviation of the plan's marginals from the weights of `a`, `b`.
    pub fn marginal_error(&self, a: &DiscreteMeasure, b: &DiscreteMeasure) -> f64 {
        let mut ra = vec![0.0; a.len()];
        let mut rb = vec![0.0; b.len()];
        for &(i, j, m) in &self.pairs {
            ra[i] += m;
            rb[j] += m;
        }
        let ea = ra.iter().zip(a.weights()).map(|(x, w)| (x - w).abs());
        let eb = rb.iter().zip(b.weights()).map(|(x, w)| (x - w).abs());
        ea.chain(eb).fold(0.0, f64::max)
    }
}

#[inline]
pub fn ground_cost(x: &[f64], y: &[f64], p: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum();
    if p == 2.0 {
        d2
    } else if p == 1.0 {
        d2.sqrt()
    } else {
        d2.sqrt().powf(p)
    }
}

/// Row-major `|a| × |b|` matrix of ‖a_i − b_j‖₂^p.
pub fn cost_matrix(a: &DiscreteMeasure, b: &DiscreteMeasure, p: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for x in a.points() {
        out.extend(b.points().map(|y| ground_cost(x, y, p)));
    }
    out
}

fn check_inputs(a: &DiscreteMeasure, b: &DiscreteMeasure, p: f64) -> Result<()> {
    check_same_dim(a, b)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    if !(p >= 1.0) || !p.is_finite() {
        return invalid(format!("p = {p} must be a finite number >= 1"));
    }
    Ok(())
}

/// Exact W_p(a, b) together with an optimal plan.
pub fn wasserstein_p_exact(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    p: f64,
) -> Result<(f64, CouplingPlan)> {
    check_inputs(a, b, p)?;
    let cost = cost_matrix(a, b, p);
    let plan = if a.len() == b.len() && a.is_uniform() && b.is_uniform() {
        let n = a.len();
        let mass = 1.0 / n as f64;
        let sol = assignment::solve(n, &cost);
        let cost_p = sol.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() * mass;
        CouplingPlan {
            pairs: sol.into_iter().enumerate().map(|(i, j)| (i, j, mass)).collect(),
            cost_p,
        }
    } else {
        let m = b.len();
        let flow = flow::solve(a.weights(), b.weights(), &cost);
        let mut pairs = Vec::new();
        let mut cost_p = 0.0;
        for (k, &f) in flow.iter().enumerate() {
            if f > 0.0 {
                pairs.push((k / m, k % m, f));
                cost_p += f * cost[k];
            }
        }
        CouplingPlan { pairs, cost_p }
    };
    Ok((plan.cost_p.max(0.0).powf(1.0 / p), plan))
}

/// Exact W_p by enumerating all permutations. Equal-size uniform measures of
/// at most eight atoms only.
pub fn wasserstein_p_bruteforce(a: &DiscreteMeasure, b: &DiscreteMeasure, p: f64) -> Result<f64> {
    check_inputs(a, b, p)?;
    let n = a.len();
    if b.len() != n {
        return invalid("brute force needs equal-size measures");
    }
    if n > BRUTEFORCE_MAX {
        return Err(Error::TooLarge {
            size: n,
            max: BRUTEFORCE_MAX,
        });
    }
    if !a.is_uniform() || !b.is_uniform() {
        return invalid("brute force needs uniform weights");
    }
    let cost = cost_matrix(a, b, p);
    // Heap's algorithm over target orderings.
    let mut perm: Vec<usize> = (0..n).collect();
    let eval = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>();
    let mut best = eval(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(eval(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok((best / n as f64).max(0.0).powf(1.0 / p))
}

/// Median of the pairwise cost matrix.
pub fn median_cost(a: &DiscreteMeasure, b: &DiscreteMeasure, p: f64) -> f64 {
    let mut cost = cost_matrix(a, b, p);
    let mid = cost.len() / 2;
    let (_, m, _) = cost.select_nth_unstable_by(mid, f64::total_cmp);
    *m
}

/// Default regularization: 1e-3 × median pairwise cost.
pub fn default_entropic_reg(a: &DiscreteMeasure, b: &DiscreteMeasure, p: f64) -> f64 {
    ENTROPIC_REG_FACTOR * median_cost(a, b, p)
}

/// Entropic estimate of W_p: the p-th root of min ⟨P,C⟩ + reg·KL(P ‖ a⊗b).
///
/// The regularized value is at least the exact W_p^p and at most
/// W_p^p + reg·log(n) for equal-size uniform inputs. It is non-increasing as
/// `reg` decreases.
pub fn wasserstein_p_entropic(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    p: f64,
    reg: f64,
    max_iters: usize,
    tol: f64,
) -> Result<f64> {
    check_inputs(a, b, p)?;
    let cost = cost_matrix(a, b, p);
    let sol = entropic::solve(
        a.weights(),
        b.weights(),
        &cost,
        entropic::SinkhornOptions { reg, max_iters, tol },
    )?;
    Ok(sol.value.max(0.0).powf(1.0 / p))
}

/// Certified upper bound on W_p^p(a, b) for measures supported in [0,1]^D.
/// See [`multiscale`].
pub fn multiscale_wp_upper_bound(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    p: f64,
    s_level: u32,
    t_level: u32,
) -> Result<f64> {
    multiscale::upper_bound(a, b, p, s_level, t_level).map(|m| m.value)
}

/// W_p with the exact solver up to `exact_cutoff` atoms per side, the
/// entropic solver with default settings above it.
pub fn wasserstein_p_auto(
    a: &DiscreteMeasure,
    b: &DiscreteMeasure,
    p: f64,
    exact_cutoff: usize,
) -> Result<f64> {
    if a.len().max(b.len()) <= exact_cutoff {
        wasserstein_p_exact(a, b, p).map(|(d, _)| d)
    } else {
        let reg = default_entropic_reg(a, b, p);
        wasserstein_p_entropic(a, b, p, reg, ENTROPIC_MAX_ITERS, ENTROPIC_TOL)
    }
}
