//! Prediction-error series and their lagged 2-D embedding.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecaster::SeriesForecast;
use crate::rng::SplitMix64;

/// Default share of synthetic attack-like points relative to the train
/// embedding size.
pub const DEFAULT_AUGMENT_FRACTION: f64 = 0.3;

/// Per-timestep MAE between prediction and reading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub errors: Vec<f64>,
    pub target_indices: Vec<usize>,
    /// Largest error in the series.
    pub delta: f64,
    /// Population standard deviation of the errors.
    pub sigma: f64,
}

impl ErrorSeries {
    pub fn new(errors: Vec<f64>, target_indices: Vec<usize>) -> Result<Self> {
        if errors.len() != target_indices.len() {
            return Err(Error::Shape(format!(
                "{} errors but {} indices",
                errors.len(),
                target_indices.len()
            )));
        }
        if let Some(e) = errors.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(Error::InvalidArgument(format!("invalid prediction error {e}")));
        }
        let (delta, sigma) = if errors.is_empty() {
            (0.0, 0.0)
        } else {
            let n = errors.len() as f64;
            let mean = errors.iter().sum::<f64>() / n;
            let var = errors.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            (errors.iter().cloned().fold(0.0, f64::max), var.sqrt())
        };
        Ok(Self {
            errors,
            target_indices,
            delta,
            sigma,
        })
    }

    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn from_forecast(forecast: &SeriesForecast) -> Result<Self> {
        compute_errors(
            &forecast.predictions,
            &forecast.targets,
            forecast.channels,
            &forecast.target_indices,
        )
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,error\n");
        for (i, e) in self.target_indices.iter().zip(&self.errors) {
            let _ = writeln!(out, "{i},{e}");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let mut errors = Vec::new();
        let mut indices = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::at_row(row, e.to_string()))?;
            if record.len() != 2 {
                return Err(Error::at_row(row, "expected index,error"));
            }
            indices.push(
                record[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::at_row(row, "bad index"))?,
            );
            errors.push(
                record[1]
                    .trim()
                    .parse()
                    .map_err(|_| Error::at_row(row, "bad error value"))?,
            );
        }
        Self::new(errors, indices)
    }
}

/// `errors[i]` is the channel-mean absolute difference of row `i` of the
/// row-major `predictions` and `targets`.
pub fn compute_errors(
    predictions: &[f64],
    targets: &[f64],
    channels: usize,
    target_indices: &[usize],
) -> Result<ErrorSeries> {
    if channels == 0 {
        return Err(Error::Shape("channel count must be positive".into()));
    }
    if predictions.len() != targets.len() || predictions.len() != channels * target_indices.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} targets, {} indices x {channels} channels",
            predictions.len(),
            targets.len(),
            target_indices.len()
        )));
    }
    let errors = predictions
        .chunks(channels)
        .zip(targets.chunks(channels))
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| (a - b).abs()).sum::<f64>() / channels as f64)
        .collect();
    ErrorSeries::new(errors, target_indices.to_vec())
}

/// Lagged pairs `(e_t, e_{t-lag})`, optionally followed by synthetic points.
///
/// Real points come first, in time order; `point_indices` covers exactly
/// those and gives the timestep of the first coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEmbedding {
    pub lag: usize,
    pub points: Vec<[f64; 2]>,
    pub point_indices: Vec<usize>,
    /// Explicit per-point weights; `None` means unit weights.
    pub weights: Option<Vec<f64>>,
    pub synthetic: Vec<bool>,
}

impl ErrorEmbedding {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn real_len(&self) -> usize {
        self.point_indices.len()
    }

    pub fn synthetic_len(&self) -> usize {
        self.points.len() - self.point_indices.len()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,e_t,e_lag,weight,synthetic\n");
        for (i, p) in self.points.iter().enumerate() {
            let index = self
                .point_indices
                .get(i)
                .map(|t| t.to_string())
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{index},{},{},{},{}",
                p[0],
                p[1],
                self.weight(i),
                u8::from(self.synthetic[i])
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Point `i` is `(errors[i + lag], errors[i])`, stamped with timestep
/// `target_indices[i + lag]`. `lag = 0` gives the degenerate diagonal
/// embedding `(e_t, e_t)` for detectors that should see raw errors.
pub fn embed(series: &ErrorSeries, lag: usize) -> Result<ErrorEmbedding> {
    if series.len() <= lag {
        return Err(Error::InvalidArgument(format!(
            "series of length {} is too short for lag {lag}",
            series.len()
        )));
    }
    let n = series.len() - lag;
    let points = (0..n)
        .map(|i| [series.errors[i + lag], series.errors[i]])
        .collect();
    Ok(ErrorEmbedding {
        lag,
        points,
        point_indices: series.target_indices[lag..].to_vec(),
        weights: None,
        synthetic: vec![false; n],
    })
}

/// Appends `round(fraction * n)` points drawn from an axis-aligned Gaussian
/// centred at `(2 delta, 2 delta)` with per-axis variance `sigma_train`
/// (standard deviation `sqrt(sigma_train)`); negative coordinates clamp to 0.
pub fn augment(
    embedding: &ErrorEmbedding,
    delta: f64,
    sigma_train: f64,
    fraction: f64,
    seed: u64,
) -> Result<ErrorEmbedding> {
    if !(fraction > 0.0 && fraction.is_finite()) {
        return Err(Error::InvalidArgument(format!("augmentation fraction {fraction} must be > 0")));
    }
    if sigma_train.is_nan() || sigma_train < 0.0 {
        return Err(Error::InvalidArgument(format!("sigma_train {sigma_train} must be >= 0")));
    }
    let count = synthetic_count(embedding.len(), fraction);
    let mean = 2.0 * delta;
    let std_dev = sigma_train.sqrt();
    let mut rng = SplitMix64::new(seed);
    let mut out = embedding.clone();
    out.points.reserve(count);
    for _ in 0..count {
        let x = rng.normal(mean, std_dev).max(0.0);
        let y = rng.normal(mean, std_dev).max(0.0);
        out.points.push([x, y]);
        out.synthetic.push(true);
    }
    if let Some(w) = out.weights.as_mut() {
        w.resize(out.points.len(), 1.0);
    }
    Ok(out)
}

/// `round(fraction * n)`.
pub fn synthetic_count(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round() as usize
}
