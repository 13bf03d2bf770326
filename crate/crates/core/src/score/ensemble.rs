//! Time-gated stack of per-knot networks.
//!
//! s(x, t) = Σ_i s̃_i(x)·ξ_{δ_i/2, δ_i/4}(t − t_i), where δ_i is half the
//! smallest gap from t_i to a neighbouring knot. The gates have pairwise
//! disjoint supports, so at most one network is evaluated and s(x, t_i) is
//! exactly s̃_i(x).

use nalgebra::DMatrix;

use crate::score::{Mlp, ScoreFunction};
use crate::{invalid, Error, Result};

/// ξ_{a,b}(x) = ReLU((x+a)/(a−b)) − ReLU((x+b)/(a−b)) − ReLU((x−b)/(a−b)) + ReLU((x−a)/(a−b)):
/// 1 on [−b, b], 0 outside (−a, a), linear in between.
pub fn spike_gate(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > b && b > 0.0) {
        return invalid(format!("spike gate needs a > b > 0, got a = {a}, b = {b}"));
    }
    Ok(gate(a, b, x))
}

#[inline]
fn gate(a: f64, b: f64, x: f64) -> f64 {
    let c = a - b;
    let relu = |v: f64| v.max(0.0);
    relu((x + a) / c) - relu((x + b) / c) - relu((x - b) / c) + relu((x - a) / c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatedEnsemble {
    nets: Vec<Mlp>,
    knots: Vec<f64>,
    /// Gate outer half-width a_i = δ_i/2.
    radii: Vec<f64>,
}

impl GatedEnsemble {
    /// One network per knot; knots strictly increasing; every network maps
    /// R^D to R^D.
    pub fn new(nets: Vec<Mlp>, knots: &[f64]) -> Result<Self> {
        if nets.len() != knots.len() {
            return invalid(format!("{} networks for {} knots", nets.len(), knots.len()));
        }
        if knots.is_empty() {
            return invalid("an ensemble needs at least one knot");
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("knots must be strictly increasing");
        }
        let dim = nets[0].input_dim();
        for net in &nets {
            if net.input_dim() != dim || net.output_dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: if net.input_dim() != dim { net.input_dim() } else { net.output_dim() },
                });
            }
        }
        let k = knots.len();
        let radii = (0..k)
            .map(|i| {
                let left = if i > 0 { knots[i] - knots[i - 1] } else { f64::INFINITY };
                let right = if i + 1 < k { knots[i + 1] - knots[i] } else { f64::INFINITY };
                let gap = left.min(right);
                // A lone knot gets a unit-width gate.
                let delta = if gap.is_finite() { 0.5 * gap } else { 1.0 };
                0.5 * delta
            })
            .collect();
        Ok(GatedEnsemble {
            nets,
            knots: knots.to_vec(),
            radii,
        })
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn nets(&self) -> &[Mlp] {
        &self.nets
    }

    /// Active gate (index, weight) at time t, if any.
    fn active(&self, t: f64) -> Option<(usize, f64)> {
        let pos = self.knots.partition_point(|&k| k < t);
        [pos.checked_sub(1), Some(pos)]
            .into_iter()
            .flatten()
            .filter(|&i| i < self.knots.len())
            .find_map(|i| {
                let a = self.radii[i];
                let x = t - self.knots[i];
                (x.abs() < a).then(|| (i, gate(a, 0.5 * a, x)))
            })
    }

    /// Gate values ξ_i(t − t_i) for every knot.
    pub fn gate_weights(&self, t: f64) -> Vec<f64> {
        let mut w = vec![0.0; self.knots.len()];
        if let Some((i, g)) = self.active(t) {
            w[i] = g;
        }
        w
    }
}

impl ScoreFunction for GatedEnsemble {
    fn dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    fn eval_into(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        match self.active(t) {
            Some((i, g)) => {
                let y = self.nets[i].forward(x);
                for (o, v) in out.iter_mut().zip(y) {
                    *o = g * v;
                }
            }
            None => out.fill(0.0),
        }
        Ok(())
    }

    fn eval_batch(&self, xs: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.dim();
        match self.active(t) {
            Some((i, g)) => {
                let input = DMatrix::from_column_slice(d, xs.len() / d, xs);
                let y = self.nets[i].forward_batch(&input);
                for (o, v) in out.iter_mut().zip(y.as_slice()) {
                    *o = g * v;
                }
            }
            None => out.fill(0.0),
        }
        Ok(())
    }
}
