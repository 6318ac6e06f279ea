use serde::{Deserialize, Serialize};

use super::VerdictSeries;
use crate::error::{Error, Result};
use crate::errorspace::ErrorSeries;

/// Flags a timestep when its error strictly exceeds `alpha = beta * delta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdModel {
    pub delta: f64,
    pub beta: f64,
    pub alpha: f64,
}

impl ThresholdModel {
    pub fn new(delta: f64, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta must be positive, got {beta}")));
        }
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!("delta must be non-negative, got {delta}")));
        }
        Ok(Self {
            delta,
            beta,
            alpha: beta * delta,
        })
    }

    pub fn fit(train_errors: &ErrorSeries, beta: f64) -> Result<Self> {
        if train_errors.is_empty() {
            return Err(Error::InvalidArgument("empty training error series".into()));
        }
        Self::new(train_errors.delta, beta)
    }

    pub fn detect(&self, errors: &ErrorSeries) -> VerdictSeries {
        VerdictSeries {
            indices: errors.target_indices.clone(),
            flags: errors.errors.iter().map(|&e| e > self.alpha).collect(),
            scores: errors.errors.clone(),
        }
    }
}
