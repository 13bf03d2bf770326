//! Ordinary least squares on a single regressor.

use serde::Serialize;

use crate::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope; NaN with fewer than three points.
    pub stderr_slope: f64,
    /// Coefficient of determination in [0, 1]; 1 for a constant response.
    pub r_squared: f64,
    pub n_points: usize,
}

/// Fits y ≈ intercept + slope·x. A constant response yields slope 0 exactly.
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    if xs.len() != ys.len() {
        return invalid(format!("{} abscissae for {} ordinates", xs.len(), ys.len()));
    }
    let n = xs.len();
    if n < 2 {
        return invalid("a line fit needs at least two points");
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return invalid("fit inputs must be finite");
    }
    let nf = n as f64;
    let x_mean = xs.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean).powi(2)).sum();
    if !(sxx > 0.0) {
        return invalid("all abscissae coincide");
    }
    if ys.iter().all(|&y| y == ys[0]) {
        return Ok(LinearFit {
            slope: 0.0,
            intercept: ys[0],
            stderr_slope: if n > 2 { 0.0 } else { f64::NAN },
            r_squared: 1.0,
            n_points: n,
        });
    }
    let y_mean = ys.iter().sum::<f64>() / nf;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - x_mean) * (y - y_mean)).sum();
    let syy: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr_slope = if n > 2 { (ss_res / (nf - 2.0) / sxx).sqrt() } else { f64::NAN };
    Ok(LinearFit {
        slope,
        intercept,
        stderr_slope,
        r_squared: (1.0 - ss_res / syy).clamp(0.0, 1.0),
        n_points: n,
    })
}
