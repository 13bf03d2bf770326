//! Covering and packing numbers of point clouds, and intrinsic-dimension
//! estimators built on them.
//!
//! Covers are greedy farthest-point sweeps: the next center is the point
//! farthest from all current centers, until every point is within ε. The
//! centers are pairwise more than ε apart, so the same sweep is also a
//! maximal ε-packing, and the count is sandwiched as M(2ε) ≤ N̂(ε) ≤ M(ε).

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::fit::{ols, LinearFit};
use crate::{invalid, DiscreteMeasure, Result};

/// Spacing of the s-grid searched by the (p,q)-Wasserstein estimator.
pub const S_GRID_STEP: f64 = 0.1;

/// Cap on the discarded mass; at least this much mass is always covered.
const TAU_CAP: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    #[default]
    Linf,
    L2,
}

impl Norm {
    #[inline]
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Norm::Linf => a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs())),
            Norm::L2 => a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt(),
        }
    }
}

/// A greedy ε-cover: `centers` index atoms, `assignment[i]` is the position
/// in `centers` of a center within ε of atom i.
#[derive(Debug, Clone, PartialEq)]
pub struct Cover {
    pub epsilon: f64,
    pub centers: Vec<usize>,
    pub assignment: Vec<usize>,
}

impl Cover {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    /// μ-mass of each ball's cluster, indexed like `centers`.
    pub fn cluster_masses(&self, measure: &DiscreteMeasure) -> Vec<f64> {
        let mut mass = vec![0.0; self.centers.len()];
        for (&c, &w) in self.assignment.iter().zip(measure.weights()) {
            mass[c] += w;
        }
        mass
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return invalid(format!("radius {epsilon} must be finite and positive"));
    }
    Ok(())
}

/// Farthest-point sweep starting from atom 0.
pub fn greedy_cover(measure: &DiscreteMeasure, epsilon: f64, norm: Norm) -> Result<Cover> {
    check_epsilon(epsilon)?;
    let n = measure.len();
    let mut nearest = vec![f64::INFINITY; n];
    let mut assignment = vec![0usize; n];
    let mut centers = Vec::new();
    let mut next = 0usize;
    loop {
        let slot = centers.len();
        centers.push(next);
        let c = measure.point(next);
        let mut far = (0usize, f64::NEG_INFINITY);
        for (i, (x, (d_min, a))) in measure
            .points()
            .zip(nearest.iter_mut().zip(assignment.iter_mut()))
            .enumerate()
        {
            let d = norm.distance(x, c);
            if d < *d_min {
                *d_min = d;
                *a = slot;
            }
            if *d_min > far.1 {
                far = (i, *d_min);
            }
        }
        if far.1 <= epsilon {
            break;
        }
        next = far.0;
    }
    Ok(Cover {
        epsilon,
        centers,
        assignment,
    })
}

/// Greedy upper estimate N̂(ε) of the ε-covering number of the atoms.
pub fn covering_number(measure: &DiscreteMeasure, epsilon: f64, norm: Norm) -> Result<usize> {
    Ok(greedy_cover(measure, epsilon, norm)?.len())
}

/// Size of a maximal packing whose points are pairwise more than ε apart.
pub fn packing_number(measure: &DiscreteMeasure, epsilon: f64, norm: Norm) -> Result<usize> {
    covering_number(measure, epsilon, norm)
}

/// Cluster masses of one cover, ascending, with prefix sums.
#[derive(Debug, Clone)]
struct SortedMasses {
    prefix: Vec<f64>,
}

impl SortedMasses {
    fn new(mut masses: Vec<f64>) -> Self {
        masses.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(masses.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for m in masses {
            acc += m;
            prefix.push(acc);
        }
        SortedMasses { prefix }
    }

    /// Balls left after dropping the lightest clusters of total mass ≤ τ.
    fn remaining(&self, tau: f64) -> usize {
        let k = self.prefix.len() - 1;
        let tol = 1e-12 * k as f64;
        let dropped = self.prefix.partition_point(|&s| s <= tau + tol) - 1;
        (k - dropped).max(1)
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if !(0.0..1.0).contains(&tau) {
        return invalid(format!("discarded mass {tau} must lie in [0, 1)"));
    }
    Ok(())
}

/// Upper estimate of N_ε(μ, τ): the greedy cover minus its lightest
/// clusters, dropped while their total mass stays within τ.
pub fn epsilon_tau_cover(measure: &DiscreteMeasure, epsilon: f64, tau: f64) -> Result<usize> {
    check_tau(tau)?;
    let cover = greedy_cover(measure, epsilon, Norm::Linf)?;
    Ok(SortedMasses::new(cover.cluster_masses(measure)).remaining(tau))
}

fn check_grid(epsilons: &[f64]) -> Result<()> {
    if epsilons.is_empty() {
        return invalid("empty radius grid");
    }
    for &e in epsilons {
        check_epsilon(e)?;
    }
    if epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return invalid("radius grid must be strictly decreasing");
    }
    Ok(())
}

/// Greedy cover cluster masses at each radius of a decreasing grid.
fn grid_masses(measure: &DiscreteMeasure, epsilons: &[f64], norm: Norm) -> Result<Vec<SortedMasses>> {
    epsilons
        .par_iter()
        .map(|&e| Ok(SortedMasses::new(greedy_cover(measure, e, norm)?.cluster_masses(measure))))
        .collect()
}

/// Counts at radius ε_j after discarding mass `taus[j]`. A cover at a
/// smaller radius is a cover at ε_j, so each count is the minimum over
/// all radii ε_i ≤ ε_j.
fn envelope_counts(masses: &[SortedMasses], taus: &[f64]) -> Vec<usize> {
    (0..masses.len())
        .map(|j| masses[j..].iter().map(|m| m.remaining(taus[j])).min().unwrap_or(1))
        .collect()
}

/// Greedy covering counts on a decreasing radius grid, made non-increasing
/// in ε.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoveringProfile {
    pub epsilons: Vec<f64>,
    pub counts: Vec<usize>,
    pub tau: f64,
}

impl CoveringProfile {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epsilon", "count"])?;
        for (e, c) in self.epsilons.iter().zip(&self.counts) {
            w.write_record([format!("{e:e}"), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

pub fn covering_profile(measure: &DiscreteMeasure, epsilons: &[f64], tau: f64, norm: Norm) -> Result<CoveringProfile> {
    check_grid(epsilons)?;
    check_tau(tau)?;
    let masses = grid_masses(measure, epsilons, norm)?;
    Ok(CoveringProfile {
        epsilons: epsilons.to_vec(),
        counts: envelope_counts(&masses, &vec![tau; epsilons.len()]),
        tau,
    })
}

/// ℓ∞ diameter, which is the widest coordinate range.
pub fn linf_diameter(measure: &DiscreteMeasure) -> f64 {
    (0..measure.dim())
        .map(|k| {
            let (lo, hi) = measure
                .points()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x[k]), hi.max(x[k])));
            hi - lo
        })
        .fold(0.0, f64::max)
}

/// `count` log-spaced radii from 0.5·diam down to min(diam·n^{−1/2}, 0.04·diam),
/// so the window always spans at least one decade.
pub fn default_epsilon_grid(measure: &DiscreteMeasure, count: usize) -> Result<Vec<f64>> {
    let diam = linf_diameter(measure);
    let top = 0.5 * diam;
    let bottom = (diam * (measure.len() as f64).powf(-0.5)).min(0.04 * diam);
    if count < 2 {
        return invalid("a radius grid needs at least two points");
    }
    if !(top > bottom) {
        return invalid(format!("degenerate radius window [{bottom}, {top}]"));
    }
    let ratio = (bottom / top).ln() / (count - 1) as f64;
    Ok((0..count).map(|i| top * (ratio * i as f64).exp()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionKind {
    Minkowski,
    WassersteinPq,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionEstimate {
    pub kind: DimensionKind,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// (ε_min, ε_max) of the grid.
    pub window: (f64, f64),
    pub p: Option<f64>,
    pub q: Option<f64>,
    /// No grid value of s up to 2D was admissible.
    pub saturated: bool,
}

impl DimensionEstimate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("estimate fields serialize")
    }
}

fn check_fit_grid(epsilons: &[f64]) -> Result<()> {
    check_grid(epsilons)?;
    if epsilons.len() < 4 {
        return invalid(format!("dimension fits need at least 4 radii, got {}", epsilons.len()));
    }
    if epsilons[0] / epsilons[epsilons.len() - 1] < 10.0 {
        return invalid("the radius grid must span at least one decade");
    }
    Ok(())
}

fn log_fit(epsilons: &[f64], counts: &[usize]) -> Result<LinearFit> {
    let xs: Vec<f64> = epsilons.iter().map(|e| -e.ln()).collect();
    let ys: Vec<f64> = counts.iter().map(|&c| (c as f64).ln()).collect();
    ols(&xs, &ys)
}

/// OLS slope of log N̂(ε) against log(1/ε) over the grid, ℓ∞ balls.
pub fn fit_minkowski_dimension(measure: &DiscreteMeasure, epsilons: &[f64]) -> Result<DimensionEstimate> {
    check_fit_grid(epsilons)?;
    let profile = covering_profile(measure, epsilons, 0.0, Norm::Linf)?;
    let fit = log_fit(epsilons, &profile.counts)?;
    Ok(DimensionEstimate {
        kind: DimensionKind::Minkowski,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        window: (epsilons[epsilons.len() - 1], epsilons[0]),
        p: None,
        q: None,
        saturated: false,
    })
}

/// τ(ε) = ε^{spq/((q−p)(s−2p))}, capped below 1.
fn discard_mass(epsilon: f64, s: f64, p: f64, q: f64) -> f64 {
    let gap = s - 2.0 * p;
    let exponent = if gap > 0.0 { s * p * q / ((q - p) * gap) } else { f64::INFINITY };
    epsilon.powf(exponent).min(TAU_CAP)
}

/// Smallest s on the grid {2p + 0.1k} (up to 2D) whose τ-discarded covering
/// profile stays under the envelope line of slope s.
///
/// With L_j = log(ε_max/ε_j), the τ = 0 profile is fitted by OLS with slope
/// ŝ₀, and K = max_j (log N_j − ŝ₀ L_j). A value s is admissible when
/// log N_{ε_j}(μ, τ_s(ε_j)) ≤ K + s·L_j for every j. Admissibility is
/// monotone in s, in q and in p, and s = ŝ₀ is always admissible.
pub fn fit_wasserstein_pq_dimension(
    measure: &DiscreteMeasure,
    p: f64,
    q: f64,
    epsilons: &[f64],
) -> Result<DimensionEstimate> {
    if !(p > 0.0 && q > p) || !q.is_finite() {
        return invalid(format!("need 0 < p < q, got p = {p}, q = {q}"));
    }
    check_fit_grid(epsilons)?;
    let masses = grid_masses(measure, epsilons, Norm::Linf)?;
    let m = epsilons.len();
    let base = envelope_counts(&masses, &vec![0.0; m]);
    let base_fit = log_fit(epsilons, &base)?;
    let top = epsilons[0];
    let lever: Vec<f64> = epsilons.iter().map(|e| (top / e).ln()).collect();
    let envelope = base
        .iter()
        .zip(&lever)
        .map(|(&c, l)| (c as f64).ln() - base_fit.slope * l)
        .fold(f64::NEG_INFINITY, f64::max);

    let admissible = |s: f64| {
        let taus: Vec<f64> = epsilons.iter().map(|&e| discard_mass(e, s, p, q)).collect();
        envelope_counts(&masses, &taus)
            .iter()
            .zip(&lever)
            .all(|(&c, l)| (c as f64).ln() - s * l <= envelope + 1e-12)
    };
    let s_max = 2.0 * measure.dim() as f64;
    let mut s = 2.0 * p;
    let mut k = 0usize;
    let mut saturated = true;
    while s <= s_max + 1e-12 {
        if admissible(s) {
            saturated = false;
            break;
        }
        k += 1;
        s = 2.0 * p + S_GRID_STEP * k as f64;
    }
    if saturated {
        s = 2.0 * p + S_GRID_STEP * (k - 1) as f64;
    }
    Ok(DimensionEstimate {
        kind: DimensionKind::WassersteinPq,
        slope: s,
        intercept: envelope,
        r_squared: base_fit.r_squared,
        window: (epsilons[m - 1], top),
        p: Some(p),
        q: Some(q),
        saturated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discard_mass_limits() {
        assert_eq!(discard_mass(0.5, 2.0, 1.0, 3.0), 0.0);
        assert!(discard_mass(2.0, 2.0, 1.0, 3.0) < 1.0);
        let t = discard_mass(0.1, 4.0, 1.0, 2.0);
        assert!((t - 0.1f64.powf(4.0 * 2.0 / 2.0)).abs() < 1e-15);
    }

    #[test]
    fn remaining_never_drops_every_ball() {
        let m = SortedMasses::new(vec![0.5, 0.25, 0.25]);
        assert_eq!(m.remaining(0.0), 3);
        assert_eq!(m.remaining(0.3), 2);
        assert_eq!(m.remaining(0.5), 1);
        assert_eq!(m.remaining(0.99), 1);
    }
}
