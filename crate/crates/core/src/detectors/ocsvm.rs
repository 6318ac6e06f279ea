use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::VerdictSeries;
use crate::error::{Error, Result};
use crate::errorspace::ErrorEmbedding;

/// Offset added to every error before it becomes a sample weight, so no box
/// constraint collapses to zero.
pub const WEIGHT_EPSILON: f64 = 1e-6;

const KKT_TOLERANCE: f64 = 1e-6;
/// Above this many points kernel rows are recomputed instead of stored.
const DENSE_KERNEL_LIMIT: usize = 3000;

pub fn rbf(gamma: f64, a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (-gamma * (dx * dx + dy * dy)).exp()
}

/// `WEIGHT_EPSILON + e_i` for each point's current error, rescaled to mean 1.
pub fn default_weights(points: &[[f64; 2]]) -> Vec<f64> {
    let raw: Vec<f64> = points.iter().map(|p| WEIGHT_EPSILON + p[0].max(0.0)).collect();
    let mean = raw.iter().sum::<f64>() / raw.len().max(1) as f64;
    raw.iter().map(|w| w / mean).collect()
}

/// One-class SVM with RBF kernel and per-sample box constraints.
///
/// Dual: minimize `0.5 a'Qa` subject to `sum a = 1` and
/// `0 <= a_i <= w_i / (nu * n * mean(w))`. Decision value is
/// `sum a_i K(sv_i, x) - rho`; negative means attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcsvmModel {
    pub nu: f64,
    pub gamma: f64,
    pub support_vectors: Vec<[f64; 2]>,
    pub alphas: Vec<f64>,
    pub rho: f64,
    pub sample_weights: Vec<f64>,
    /// Final dual objective `0.5 a'Qa`.
    pub objective: f64,
    pub iterations: usize,
}

struct Kernel<'a> {
    points: &'a [[f64; 2]],
    gamma: f64,
    dense: Option<Vec<f64>>,
}

impl<'a> Kernel<'a> {
    fn new(points: &'a [[f64; 2]], gamma: f64) -> Self {
        let n = points.len();
        let dense = (n <= DENSE_KERNEL_LIMIT).then(|| {
            let mut q = vec![0.0; n * n];
            for i in 0..n {
                q[i * n + i] = 1.0;
                for j in 0..i {
                    let k = rbf(gamma, points[i], points[j]);
                    q[i * n + j] = k;
                    q[j * n + i] = k;
                }
            }
            q
        });
        Self { points, gamma, dense }
    }

    fn row(&self, i: usize) -> Cow<'_, [f64]> {
        let n = self.points.len();
        match &self.dense {
            Some(q) => Cow::Borrowed(&q[i * n..(i + 1) * n]),
            None => Cow::Owned(
                self.points
                    .iter()
                    .map(|&p| rbf(self.gamma, self.points[i], p))
                    .collect(),
            ),
        }
    }
}

impl OcsvmModel {
    /// Fits on the real (non-synthetic) points of `embedding`. Explicit
    /// embedding weights are used when present, otherwise [`default_weights`].
    pub fn fit(embedding: &ErrorEmbedding, nu: f64, gamma: f64) -> Result<Self> {
        let real = embedding.real_len();
        let points = &embedding.points[..real];
        let weights = match &embedding.weights {
            Some(w) => w[..real].to_vec(),
            None => default_weights(points),
        };
        Self::fit_points(points, &weights, nu, gamma)
    }

    /// Pairwise (SMO-style) solver with maximal-violating-pair selection.
    pub fn fit_points(points: &[[f64; 2]], weights: &[f64], nu: f64, gamma: f64) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::InvalidArgument(format!("one-class SVM needs at least 2 points, got {n}")));
        }
        if weights.len() != n {
            return Err(Error::Shape(format!("{n} points but {} weights", weights.len())));
        }
        if !(nu > 0.0 && nu <= 1.0) {
            return Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {nu}")));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!("gamma must be positive, got {gamma}")));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidArgument("sample weights must be finite and >= 0".into()));
        }
        if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::InvalidArgument("embedding contains non-finite points".into()));
        }
        let mean_w = weights.iter().sum::<f64>() / n as f64;
        if mean_w <= 0.0 {
            return Err(Error::InvalidArgument("sample weights are all zero".into()));
        }
        let upper: Vec<f64> = weights.iter().map(|w| w / (nu * n as f64 * mean_w)).collect();

        // Feasible start: fill boxes in order until the mass reaches 1.
        let mut alpha = vec![0.0; n];
        let mut remaining = 1.0;
        for i in 0..n {
            if remaining <= 0.0 {
                break;
            }
            alpha[i] = upper[i].min(remaining);
            remaining -= alpha[i];
        }

        let kernel = Kernel::new(points, gamma);
        let mut grad = vec![0.0; n];
        for (i, &a) in alpha.iter().enumerate() {
            if a > 0.0 {
                for (g, q) in grad.iter_mut().zip(kernel.row(i).iter()) {
                    *g += a * q;
                }
            }
        }

        let max_iter = (100 * n).max(100_000);
        let mut iterations = 0;
        loop {
            let mut i = usize::MAX;
            let mut j = usize::MAX;
            let (mut g_min, mut g_max) = (f64::INFINITY, f64::NEG_INFINITY);
            for k in 0..n {
                if alpha[k] < upper[k] && grad[k] < g_min {
                    g_min = grad[k];
                    i = k;
                }
                if alpha[k] > 0.0 && grad[k] > g_max {
                    g_max = grad[k];
                    j = k;
                }
            }
            let violation = if i == usize::MAX || j == usize::MAX { 0.0 } else { g_max - g_min };
            if violation < KKT_TOLERANCE {
                break;
            }
            if iterations >= max_iter {
                return Err(Error::NotConverged { iterations, violation });
            }
            iterations += 1;

            let qi = kernel.row(i);
            let qj = kernel.row(j);
            let curvature = (2.0 - 2.0 * qi[j]).max(1e-12);
            let room_i = upper[i] - alpha[i];
            let mut d = violation / curvature;
            let mut i_saturates = false;
            if d >= room_i {
                d = room_i;
                i_saturates = true;
            }
            let mut j_empties = false;
            if d >= alpha[j] {
                d = alpha[j];
                j_empties = true;
                i_saturates = d == room_i;
            }
            alpha[i] = if i_saturates { upper[i] } else { alpha[i] + d };
            alpha[j] = if j_empties { 0.0 } else { alpha[j] - d };
            for k in 0..n {
                grad[k] += d * (qi[k] - qj[k]);
            }
        }

        let rho = compute_rho(&alpha, &upper, &grad);
        let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * g).sum::<f64>();
        let (support_vectors, alphas) = points
            .iter()
            .zip(&alpha)
            .filter(|(_, a)| **a > 0.0)
            .map(|(p, a)| (*p, *a))
            .unzip();
        Ok(Self {
            nu,
            gamma,
            support_vectors,
            alphas,
            rho,
            sample_weights: weights.to_vec(),
            objective,
            iterations,
        })
    }

    pub fn decision(&self, x: [f64; 2]) -> f64 {
        self.support_vectors
            .iter()
            .zip(&self.alphas)
            .map(|(sv, a)| a * rbf(self.gamma, *sv, x))
            .sum::<f64>()
            - self.rho
    }

    /// Scores the real points of `embedding`.
    pub fn detect(&self, embedding: &ErrorEmbedding) -> VerdictSeries {
        let real = embedding.real_len();
        let scores: Vec<f64> = embedding.points[..real].iter().map(|&p| self.decision(p)).collect();
        VerdictSeries {
            indices: embedding.point_indices.clone(),
            flags: scores.iter().map(|&s| s < 0.0).collect(),
            scores,
        }
    }
}

/// Free support vectors sit on the margin, so rho is their mean gradient.
/// Without any, rho is the midpoint of the interval the KKT conditions allow.
fn compute_rho(alpha: &[f64], upper: &[f64], grad: &[f64]) -> f64 {
    let mut free_sum = 0.0;
    let mut free_count = 0usize;
    let mut at_upper_max = f64::NEG_INFINITY;
    let mut at_zero_min = f64::INFINITY;
    for k in 0..alpha.len() {
        if alpha[k] > 0.0 && alpha[k] < upper[k] {
            free_sum += grad[k];
            free_count += 1;
        } else if alpha[k] >= upper[k] {
            at_upper_max = at_upper_max.max(grad[k]);
        } else {
            at_zero_min = at_zero_min.min(grad[k]);
        }
    }
    if free_count > 0 {
        free_sum / free_count as f64
    } else if at_upper_max.is_finite() && at_zero_min.is_finite() {
        0.5 * (at_upper_max + at_zero_min)
    } else if at_upper_max.is_finite() {
        at_upper_max
    } else {
        at_zero_min
    }
}
