//! Entropic optimal transport by log-domain Sinkhorn iterations.
//!
//! Solves min_P ⟨P, C⟩ + ε KL(P ‖ a⊗b) over couplings of `a` and `b`. The
//! regularization is annealed geometrically from the largest cost down to the
//! target ε, warm-starting the dual potentials at every stage. At the target ε,
//! Sinkhorn sweeps alternate with damped Newton steps on the semi-dual in `g`,
//! which is concave with a closed-form Hessian.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct SinkhornOptions {
    /// Target regularization ε > 0, in cost units.
    pub reg: f64,
    pub max_iters: usize,
    /// Bound on the sup-norm change of the dual potentials between sweeps.
    pub tol: f64,
}

/// Result of a converged solve.
#[derive(Debug, Clone)]
pub struct SinkhornSolution {
    /// ⟨P, C⟩ + ε KL(P ‖ a⊗b) at the returned potentials.
    pub value: f64,
    /// ⟨P, C⟩ alone.
    pub transport_cost: f64,
    pub iterations: usize,
    pub residual: f64,
}

fn log_sum_exp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sinkhorn sweeps between Newton polishing rounds.
const POLISH_EVERY: usize = 100;
const NEWTON_STEPS: usize = 30;
/// Largest target size for which the dense m × m Newton system is formed.
const NEWTON_MAX: usize = 1024;

struct Problem<'a> {
    a: &'a [f64],
    b: &'a [f64],
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    cost: &'a [f64],
    n: usize,
    m: usize,
}

impl Problem<'_> {
    fn update_f(&self, f: &mut [f64], g: &[f64], eps: f64) {
        for (i, fi) in f.iter_mut().enumerate() {
            let row = &self.cost[i * self.m..(i + 1) * self.m];
            let lse = log_sum_exp((0..self.m).map(|j| self.log_b[j] + (g[j] - row[j]) / eps));
            *fi = if lse.is_finite() { -eps * lse } else { 0.0 };
        }
    }

    fn update_g(&self, g: &mut [f64], f: &[f64], eps: f64) {
        for (j, gj) in g.iter_mut().enumerate() {
            let lse = log_sum_exp(
                (0..self.n).map(|i| self.log_a[i] + (f[i] - self.cost[i * self.m + j]) / eps),
            );
            *gj = if lse.is_finite() { -eps * lse } else { 0.0 };
        }
    }

    #[inline]
    fn plan_entry(&self, f: &[f64], g: &[f64], eps: f64, i: usize, j: usize) -> f64 {
        (self.log_a[i] + self.log_b[j] + (f[i] + g[j] - self.cost[i * self.m + j]) / eps).exp()
    }

    /// Row-marginal L1 error (column marginals are exact after a g-update).
    fn marginal_residual(&self, f: &[f64], g: &[f64], eps: f64) -> f64 {
        (0..self.n)
            .map(|i| {
                let r: f64 = (0..self.m).map(|j| self.plan_entry(f, g, eps, i, j)).sum();
                (r - self.a[i]).abs()
            })
            .sum()
    }

    /// Semi-dual objective Σ b g + Σ a f(g); leaves f(g) in `f`.
    fn semi_dual(&self, f: &mut [f64], g: &[f64], eps: f64) -> f64 {
        self.update_f(f, g, eps);
        let fa: f64 = f.iter().zip(self.a).map(|(x, w)| x * w).sum();
        let gb: f64 = g.iter().zip(self.b).map(|(x, w)| x * w).sum();
        fa + gb
    }

    /// Gradient of the semi-dual in g, b − column sums of the plan, given f = f(g).
    fn semi_dual_grad(&self, f: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
        let mut grad = self.b.to_vec();
        for i in 0..self.n {
            for (j, gr) in grad.iter_mut().enumerate() {
                *gr -= self.plan_entry(f, g, eps, i, j);
            }
        }
        grad
    }

    /// Damped Newton ascent on the semi-dual. Returns the number of steps taken.
    fn newton_polish(&self, f: &mut [f64], g: &mut [f64], eps: f64, budget: usize) -> usize {
        let (n, m) = (self.n, self.m);
        let mut phi = self.semi_dual(f, g, eps);
        let mut steps = 0;
        let mut f_trial = vec![0.0; n];
        let mut g_trial = vec![0.0; m];
        while steps < budget.min(NEWTON_STEPS) {
            let grad = self.semi_dual_grad(f, g, eps);
            let gmax = grad.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if gmax < 1e-16 {
                break;
            }
            // Negated Hessian: (diag(col) − Pᵀ diag(1/a) P) / ε, plus 11ᵀ/(mε)
            // on the null direction of constant shifts.
            let mut h = DMatrix::<f64>::from_element(m, m, 1.0 / (m as f64 * eps));
            let mut row = vec![0.0; m];
            for i in 0..n {
                if self.a[i] == 0.0 {
                    continue;
                }
                for (j, r) in row.iter_mut().enumerate() {
                    *r = self.plan_entry(f, g, eps, i, j);
                }
                let inv_a = 1.0 / self.a[i];
                for k in 0..m {
                    if row[k] == 0.0 {
                        continue;
                    }
                    let rk = row[k] * inv_a / eps;
                    h[(k, k)] += row[k] / eps;
                    for j in 0..m {
                        h[(j, k)] -= rk * row[j];
                    }
                }
            }
            let dmax = (0..m).map(|j| h[(j, j)]).fold(0.0f64, f64::max);
            for j in 0..m {
                h[(j, j)] += 1e-13 * dmax;
            }
            let rhs = DVector::from_column_slice(&grad);
            let dir = match h.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => match h.lu().solve(&rhs) {
                    Some(d) => d,
                    None => break,
                },
            };
            let slope: f64 = dir.iter().zip(&grad).map(|(d, g)| d * g).sum();
            if !(slope > 0.0) {
                break;
            }
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                for j in 0..m {
                    g_trial[j] = g[j] + t * dir[j];
                }
                let phi_trial = self.semi_dual(&mut f_trial, &g_trial, eps);
                if phi_trial >= phi + 1e-4 * t * slope {
                    accepted = true;
                    phi = phi_trial;
                    break;
                }
                t *= 0.5;
            }
            steps += 1;
            if !accepted {
                self.update_f(f, g, eps);
                break;
            }
            g.copy_from_slice(&g_trial);
            f.copy_from_slice(&f_trial);
        }
        steps
    }
}

pub fn solve(a: &[f64], b: &[f64], cost: &[f64], opts: SinkhornOptions) -> Result<SinkhornSolution> {
    let n = a.len();
    let m = b.len();
    assert_eq!(cost.len(), n * m);
    if !(opts.reg > 0.0) {
        return Err(Error::InvalidInput(format!("reg = {} must be positive", opts.reg)));
    }
    let prob = Problem {
        a,
        b,
        log_a: a.iter().map(|w| w.ln()).collect(),
        log_b: b.iter().map(|w| w.ln()).collect(),
        cost,
        n,
        m,
    };
    let cmax = cost.iter().fold(0.0f64, |acc, &c| acc.max(c));

    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; m];

    let mut iterations = 0usize;
    let mut eps = (cmax * 0.5).max(opts.reg);
    // Annealing stages: loose tolerance, short iteration caps.
    while eps > opts.reg {
        for k in 0..50 {
            prob.update_f(&mut f, &g, eps);
            prob.update_g(&mut g, &f, eps);
            iterations += 1;
            if k % 10 == 9 && prob.marginal_residual(&f, &g, eps) < 1e-3 {
                break;
            }
        }
        eps = (eps * 0.5).max(opts.reg);
        if iterations >= opts.max_iters {
            break;
        }
    }
    let eps = opts.reg;
    let mut res = f64::INFINITY;
    let mut prev_f = f.clone();
    let mut prev_g = g.clone();
    let mut since_polish = 0;
    while iterations < opts.max_iters {
        prev_f.copy_from_slice(&f);
        prev_g.copy_from_slice(&g);
        prob.update_f(&mut f, &g, eps);
        prob.update_g(&mut g, &f, eps);
        iterations += 1;
        // Dual residual: sup-norm change of the potentials, modulo the
        // constant shift (f + c, g − c) that leaves the plan unchanged.
        let shift = f[0] - prev_f[0];
        let df = f.iter().zip(&prev_f).map(|(x, y)| (x - y - shift).abs());
        let dg = g.iter().zip(&prev_g).map(|(x, y)| (x - y + shift).abs());
        res = df.chain(dg).fold(0.0, f64::max);
        if res <= opts.tol {
            break;
        }
        since_polish += 1;
        if since_polish >= POLISH_EVERY && m <= NEWTON_MAX {
            since_polish = 0;
            iterations += prob.newton_polish(&mut f, &mut g, eps, opts.max_iters - iterations);
        }
    }
    if res > opts.tol {
        return Err(Error::NotConverged {
            iterations,
            residual: res,
        });
    }
    let mut value = 0.0;
    let mut transport_cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let p = prob.plan_entry(&f, &g, eps, i, j);
            value += p * (f[i] + g[j]);
            transport_cost += p * cost[i * m + j];
        }
    }
    Ok(SinkhornSolution {
        value,
        transport_cost,
        iterations,
        residual: res,
    })
}
