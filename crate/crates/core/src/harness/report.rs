//! Records, fit summaries and plots.

use std::io::Write;
use std::path::Path;

use plotters::prelude::*;
use serde::Serialize;

use crate::harness::RateFit;
use crate::{Error, Result};

/// One measured value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub experiment: String,
    pub generator: String,
    pub n: usize,
    /// `None` for aggregates over repetitions.
    pub rep: Option<usize>,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    /// Seconds spent producing the value; not part of reproducibility.
    pub wall_time: f64,
}

impl RunRecord {
    fn sort_key(&self) -> (&str, &str, usize, usize, &str) {
        (
            &self.experiment,
            &self.generator,
            self.n,
            self.rep.map_or(usize::MAX, |r| r),
            &self.metric,
        )
    }
}

/// Sorts by (experiment, generator, n, rep, metric); aggregates last.
pub fn sort_records(records: &mut [RunRecord]) {
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["experiment", "generator", "n", "rep", "seed", "metric", "value", "wall_time"])?;
    for r in records {
        w.write_record([
            r.experiment.clone(),
            r.generator.clone(),
            r.n.to_string(),
            r.rep.map(|v| v.to_string()).unwrap_or_default(),
            r.seed.to_string(),
            r.metric.clone(),
            format!("{:e}", r.value),
            format!("{:.6}", r.wall_time),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `slope,intercept,stderr,n_points`; a degenerate fit is written as NaNs
/// with zero points.
pub fn write_fit_csv<W: Write>(fit: Option<&RateFit>, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["slope", "intercept", "stderr", "n_points"])?;
    let row = match fit {
        Some(f) => [
            format!("{:e}", f.slope),
            format!("{:e}", f.intercept),
            format!("{:e}", f.stderr_slope),
            f.n_points.to_string(),
        ],
        None => ["NaN".into(), "NaN".into(), "NaN".into(), "0".into()],
    };
    w.write_record(row)?;
    w.flush()?;
    Ok(())
}

fn plot_error(e: impl std::fmt::Display) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Log-log scatter of (n, value) with the fitted line.
pub fn plot_rate_svg(
    path: impl AsRef<Path>,
    title: &str,
    points: &[(f64, f64)],
    fit: Option<&RateFit>,
) -> Result<()> {
    plot_loglog_svg(path, title, ("n", "value"), points, fit)
}

/// Log-log scatter of the positive points with an optional fitted line
/// ln y = intercept + slope·ln x.
pub fn plot_loglog_svg(
    path: impl AsRef<Path>,
    title: &str,
    (x_label, y_label): (&str, &str),
    points: &[(f64, f64)],
    fit: Option<&RateFit>,
) -> Result<()> {
    let positive: Vec<(f64, f64)> = points.iter().copied().filter(|&(n, v)| n > 0.0 && v > 0.0).collect();
    let root = SVGBackend::new(path.as_ref(), (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_error)?;
    if positive.is_empty() {
        root.titled(&format!("{title} (no positive values)"), ("sans-serif", 18))
            .map_err(plot_error)?;
        return root.present().map_err(plot_error);
    }
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = positive.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    x_lo /= 1.5;
    x_hi *= 1.5;
    y_lo /= 1.5;
    y_hi *= 1.5;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d((x_lo..x_hi).log_scale(), (y_lo..y_hi).log_scale())
        .map_err(plot_error)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(plot_error)?;
    chart
        .draw_series(positive.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))
        .map_err(plot_error)?;
    if let Some(f) = fit {
        let line = |x: f64| (f.intercept + f.slope * x.ln()).exp();
        chart
            .draw_series(LineSeries::new([(x_lo, line(x_lo)), (x_hi, line(x_hi))], &RED))
            .map_err(plot_error)?
            .label(format!("slope {:.3} ± {:.3}", f.slope, f.stderr_slope))
            .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_error)?;
    }
    root.present().map_err(plot_error)
}
