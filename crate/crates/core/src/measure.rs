//! Weighted point clouds in R^D.
//!
//! [`DiscreteMeasure`] carries empirical measures, generated samples and the
//! inputs of every transport computation. Points are stored row-major in one
//! flat buffer.

use std::io::{Read, Write};
use std::path::Path;

use crate::{invalid, Error, Result};

/// Per-atom allowance on |Σw − 1|; summation error grows with the atom count.
const WEIGHT_SUM_TOL: f64 = 1e-12;

/// A probability measure with finitely many atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from a flat row-major coordinate buffer.
    ///
    /// Rejects empty measures, `dim == 0`, negative or non-finite weights and
    /// weights that do not sum to one within 1e-12 per atom.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("ambient dimension must be at least 1");
        }
        if weights.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if coords.len() != dim * weights.len() {
            return invalid(format!(
                "{} coordinates do not form {} points of dimension {}",
                coords.len(),
                weights.len(),
                dim
            ));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return invalid(format!("weight {i} is negative or not finite"));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return invalid("coordinates must be finite");
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL * (weights.len() as f64).max(1.0) {
            return invalid(format!("weights sum to {total}, not 1"));
        }
        Ok(Self {
            dim,
            coords,
            weights,
        })
    }

    /// Like [`from_flat`](Self::from_flat) but rescales positive weights to sum to one.
    pub fn from_flat_normalized(dim: usize, coords: Vec<f64>, mut weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return invalid(format!("weight {i} is negative or not finite"));
        }
        let total: f64 = weights.iter().sum();
        if weights.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if total <= 0.0 {
            return invalid("weights sum to zero");
        }
        for w in &mut weights {
            *w /= total;
        }
        Self::from_flat(dim, coords, weights)
    }

    /// Builds a measure from explicit points and weights.
    pub fn new(points: &[Vec<f64>], weights: Vec<f64>) -> Result<Self> {
        let dim = points.first().map(Vec::len).ok_or(Error::EmptyMeasure)?;
        if points.len() != weights.len() {
            return invalid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            ));
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights)
    }

    /// The empirical measure (1/n) Σ δ_{x_i}.
    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        Self::new(points, vec![1.0 / n.max(1) as f64; n])
    }

    pub fn uniform_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("ambient dimension must be at least 1");
        }
        let n = coords.len() / dim;
        Self::from_flat(dim, coords, vec![1.0 / n.max(1) as f64; n])
    }

    /// Point mass at `x`.
    pub fn dirac(x: &[f64]) -> Result<Self> {
        Self::from_flat(x.len(), x.to_vec(), vec![1.0])
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// True when all weights equal 1/n (to 1e-12 relative).
    pub fn is_uniform(&self) -> bool {
        let target = 1.0 / self.len() as f64;
        self.weights
            .iter()
            .all(|w| (w - target).abs() <= 1e-12 * target.max(1e-300))
    }

    /// Same atoms with coordinates mapped through `f`.
    pub fn map_points(&self, mut f: impl FnMut(&[f64], &mut [f64])) -> Self {
        let mut coords = vec![0.0; self.coords.len()];
        for (src, dst) in self.coords.chunks_exact(self.dim).zip(coords.chunks_exact_mut(self.dim)) {
            f(src, dst);
        }
        Self {
            dim: self.dim,
            coords,
            weights: self.weights.clone(),
        }
    }

    /// Weighted moment M_q and the sup-norm maximum max_i ‖x_i‖_∞ ∨ 1.
    pub fn moments(&self, q: f64) -> Result<MomentSummary> {
        moments(self, q)
    }

    /// Σ w_i ‖x_i‖², i.e. M_2².
    pub fn second_moment(&self) -> f64 {
        self.points()
            .zip(&self.weights)
            .map(|(x, w)| w * x.iter().map(|v| v * v).sum::<f64>())
            .sum()
    }

    /// Reads the `w,x1..xD` CSV layout. Weights are renormalized to sum to one.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || headers.get(0) != Some("w") {
            return Err(Error::Parse(
                "measure CSV needs a header `w,x1,...,xD`".to_string(),
            ));
        }
        for (k, h) in headers.iter().skip(1).enumerate() {
            if h != format!("x{}", k + 1) {
                return Err(Error::Parse(format!("unexpected column `{h}`")));
            }
        }
        let dim = headers.len() - 1;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{s}`: {e}", line + 1)))
            };
            weights.push(parse(&record[0])?);
            for k in 1..=dim {
                coords.push(parse(&record[k])?);
            }
        }
        Self::from_flat_normalized(dim, coords, weights)
    }

    pub fn read_csv_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["w".to_string()];
        header.extend((1..=self.dim).map(|k| format!("x{k}")));
        wtr.write_record(&header)?;
        for (x, w) in self.points().zip(&self.weights) {
            let mut row = Vec::with_capacity(self.dim + 1);
            row.push(format!("{w:e}"));
            row.extend(x.iter().map(|v| format!("{v:e}")));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Moment summary of a measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentSummary {
    pub q: f64,
    /// M_q = (Σ w_i ‖x_i‖₂^q)^{1/q}
    pub value: f64,
    /// max_i ‖x_i‖_∞ ∨ 1
    pub sup_norm_max: f64,
    /// M_2² = Σ w_i ‖x_i‖₂²
    pub second: f64,
}

impl MomentSummary {
    /// M_q^q.
    pub fn powered(&self) -> f64 {
        self.value.powf(self.q)
    }
}

pub fn moments(measure: &DiscreteMeasure, q: f64) -> Result<MomentSummary> {
    if !(q > 0.0) || !q.is_finite() {
        return invalid(format!("moment order q = {q} must be positive"));
    }
    let mut acc = 0.0;
    let mut second = 0.0;
    let mut sup: f64 = 1.0;
    for (x, w) in measure.points().zip(measure.weights()) {
        let sq = x.iter().map(|v| v * v).sum::<f64>();
        if *w > 0.0 {
            acc += w * sq.sqrt().powf(q);
            second += w * sq;
        }
        let inf = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        sup = sup.max(inf);
    }
    Ok(MomentSummary {
        q,
        value: acc.powf(1.0 / q),
        sup_norm_max: sup,
        second,
    })
}

pub(crate) fn check_same_dim(a: &DiscreteMeasure, b: &DiscreteMeasure) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    Ok(())
}
