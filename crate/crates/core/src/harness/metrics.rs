//! Localization and field-quality metrics, and the CSV record types.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point, ScalarField};

/// Mean Euclidean distance between identity-matched estimates and truth.
pub fn compute_ale(estimates: &[Point], truth: &[Point]) -> Result<f64> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch {
            src: estimates.len(),
            dst: truth.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::InvalidParameter {
            name: "estimates",
            reason: "empty".into(),
        });
    }
    Ok(estimates.iter().zip(truth).map(|(e, t)| (e - t).norm()).sum::<f64>() / estimates.len() as f64)
}

/// RMS difference between a predicted field and a ground-truth function
/// evaluated at the cell centers.
pub fn compute_field_rmse(predicted: &ScalarField, truth: impl Fn(&Point) -> f64) -> f64 {
    let centers = predicted.grid.centers();
    let ss: f64 = centers
        .iter()
        .zip(&predicted.values)
        .map(|(c, v)| (v - truth(c)).powi(2))
        .sum();
    (ss / centers.len() as f64).sqrt()
}

/// One row of `metrics.csv` per (cycle, robot). Empty cells mean "not
/// available" (e.g. no alignment yet); `status` is `ok` or the error text.
/// Wall times go to `timings.csv` so this file stays reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub cycle: usize,
    pub robot: String,
    pub waypoints: usize,
    pub status: String,
    /// Mean AP error using the estimates chosen by alignment (m).
    pub ale_ap: Option<f64>,
    /// Mean AP error of the hierarchical estimates alone (m).
    pub ale_ap_hier: Option<f64>,
    /// Mean neighbor position error (m).
    pub ale_r: Option<f64>,
    pub field_rmse: Option<f64>,
    /// Mean predictive standard deviation over the evaluation grid (dB).
    pub mean_uncertainty: Option<f64>,
    pub accept_rate: Option<f64>,
    pub candidates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApMetricsRecord {
    pub cycle: usize,
    pub robot: String,
    pub ap: String,
    /// Estimate kind chosen for the metric.
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub error: f64,
    pub hier_error: f64,
    pub weight: f64,
    pub uncertainty: f64,
    pub field_rmse: f64,
    /// Distance from the true AP to the robot's closest sample (m).
    pub nearest_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub cycle: usize,
    pub robot: String,
    pub neighbor: String,
    pub status: String,
    pub accepted: Option<bool>,
    pub weighted_error: Option<f64>,
    pub rotation: Option<f64>,
    pub tx: Option<f64>,
    pub ty: Option<f64>,
    /// Error of the neighbor position implied by this alignment (m).
    pub position_error: Option<f64>,
    pub degenerate: Option<bool>,
    pub combinations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub cycle: usize,
    pub robot: String,
    pub fit_seconds: f64,
    pub predict_seconds: f64,
}

pub fn write_csv<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Average of the finite values, if any.
pub fn mean_of(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}
