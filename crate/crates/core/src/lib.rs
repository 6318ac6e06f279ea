//! Anomaly detection for cyber-physical sensor/actuator time series.
//!
//! A windowed 1-D convolutional forecaster predicts the next reading of every
//! channel. Its per-timestep prediction errors are re-embedded as
//! `(error_t, error_{t-lag})` points, and one of three deciders flags attacks:
//! a fixed threshold `alpha = beta * delta`, a weighted one-class SVM, or
//! two-cluster k-means fitted on train errors plus synthetic attack-like
//! points. A genetic algorithm searches the pipeline hyperparameters for F1.
//!
//! [`plantsim`] generates SWaT-schema traces with labeled attack injections so
//! the whole pipeline can be exercised without the restricted dataset.

pub mod benchmark;
pub mod config;
pub mod dataio;
pub mod detectors;
pub mod error;
pub mod errorspace;
pub mod forecaster;
pub mod gaopt;
pub mod metrics;
pub mod pipeline;
pub mod plantsim;
pub mod rng;

pub use error::{Error, Result};
