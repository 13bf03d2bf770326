//! Fully connected ReLU networks with bounded weights.
//!
//! Batches are matrices with one sample per column. The flat parameter order
//! is, layer by layer, the weight matrix row-major followed by the bias; the
//! text format uses the same order.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::rng;
use crate::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    /// out × in per layer.
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    weight_bound: f64,
}

/// Activations kept by [`Mlp::forward_cached`] for backpropagation.
pub struct ForwardCache {
    /// Input followed by the post-ReLU output of every hidden layer.
    activations: Vec<DMatrix<f64>>,
    output: DMatrix<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }
}

impl Mlp {
    /// He-normal weights from `seed`, zero biases, clipped to the bound.
    pub fn init(sizes: &[usize], weight_bound: f64, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, weight_bound)?;
        let mut rng = rng::seeded(seed);
        for w in &mut net.weights {
            let scale = (2.0 / w.ncols() as f64).sqrt();
            // Row-major fill keeps the draw order aligned with the flat layout.
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = (scale * rng::normal(&mut rng)).clamp(-weight_bound, weight_bound);
                }
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], weight_bound: f64) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return invalid("layer sizes need at least an input and an output, all positive");
        }
        if !(weight_bound > 0.0) {
            return invalid(format!("weight bound {weight_bound} must be positive"));
        }
        let weights = sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect();
        let biases = sizes[1..].iter().map(|&k| DVector::zeros(k)).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            weight_bound,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    /// Number of affine layers L.
    pub fn depth(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Total number of weights and biases W.
    pub fn weight_count(&self) -> usize {
        self.sizes.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
    }

    /// B.
    pub fn weight_bound(&self) -> f64 {
        self.weight_bound
    }

    pub fn max_abs_param(&self) -> f64 {
        self.params_flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.weight_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.weight_count() {
            return Err(Error::DimensionMismatch {
                expected: self.weight_count(),
                found: params.len(),
            });
        }
        let mut it = params.iter();
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            for r in 0..w.nrows() {
                for c in 0..w.ncols() {
                    w[(r, c)] = *it.next().unwrap();
                }
            }
            for v in b.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Projects every weight and bias onto [−B, B].
    pub fn clip(&mut self) {
        let b = self.weight_bound;
        for w in &mut self.weights {
            w.apply(|v| *v = v.clamp(-b, b));
        }
        for v in &mut self.biases {
            v.apply(|x| *x = x.clamp(-b, b));
        }
    }

    /// Output for a batch with one sample per column.
    pub fn forward_batch(&self, input: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = input.clone();
        let last = self.depth() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let input = DMatrix::from_column_slice(x.len(), 1, x);
        self.forward_batch(&input).as_slice().to_vec()
    }

    pub fn forward_cached(&self, input: DMatrix<f64>) -> ForwardCache {
        let last = self.depth() - 1;
        let mut activations = Vec::with_capacity(self.depth());
        let mut a = input;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = w * &a;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            activations.push(a);
            if l < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        ForwardCache {
            activations,
            output: a,
        }
    }

    /// Flat parameter gradient given ∂loss/∂output for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, grad_output: DMatrix<f64>) -> Vec<f64> {
        let depth = self.depth();
        let mut grads_w = vec![DMatrix::zeros(0, 0); depth];
        let mut grads_b = vec![DVector::zeros(0); depth];
        let mut delta = grad_output;
        for l in (0..depth).rev() {
            let a = &cache.activations[l];
            grads_w[l] = &delta * a.transpose();
            grads_b[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                // ReLU derivative, read off the stored post-activation.
                back.zip_apply(a, |g, act| {
                    if act <= 0.0 {
                        *g = 0.0;
                    }
                });
                delta = back;
            }
        }
        let mut out = Vec::with_capacity(self.weight_count());
        for (w, b) in grads_w.iter().zip(&grads_b) {
            for r in 0..w.nrows() {
                out.extend(w.row(r).iter());
            }
            out.extend(b.iter());
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let sizes: Vec<String> = self.sizes.iter().map(ToString::to_string).collect();
        writeln!(s, "layer_sizes {}", sizes.join(" ")).unwrap();
        writeln!(s, "weight_bound {}", self.weight_bound).unwrap();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            writeln!(s, "# layer {l} weights {}x{} row-major", w.nrows(), w.ncols()).unwrap();
            for r in 0..w.nrows() {
                let row: Vec<String> = w.row(r).iter().map(|v| format!("{v:e}")).collect();
                writeln!(s, "{}", row.join(" ")).unwrap();
            }
            writeln!(s, "# layer {l} biases").unwrap();
            let row: Vec<String> = b.iter().map(|v| format!("{v:e}")).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
        let parse_err = |msg: String| Error::Parse(msg);
        let header = lines.next().ok_or_else(|| parse_err("empty model file".into()))?;
        let sizes = header
            .strip_prefix("layer_sizes")
            .ok_or_else(|| parse_err("first line must be `layer_sizes ...`".into()))?
            .split_whitespace()
            .map(|v| v.parse::<usize>().map_err(|e| parse_err(format!("layer size `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        let bound_line = lines.next().ok_or_else(|| parse_err("missing weight_bound".into()))?;
        let bound = bound_line
            .strip_prefix("weight_bound")
            .ok_or_else(|| parse_err("second line must be `weight_bound B`".into()))?
            .trim()
            .parse::<f64>()
            .map_err(|e| parse_err(format!("weight bound: {e}")))?;
        let mut net = Self::zeros(&sizes, bound)?;
        let values = lines
            .flat_map(str::split_whitespace)
            .map(|v| v.parse::<f64>().map_err(|e| parse_err(format!("value `{v}`: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != net.weight_count() {
            return Err(parse_err(format!(
                "expected {} parameters, found {}",
                net.weight_count(),
                values.len()
            )));
        }
        net.set_params_flat(&values)?;
        Ok(net)
    }

    pub fn write_path(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
