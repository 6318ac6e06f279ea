use serde::{Deserialize, Serialize};

use super::VerdictSeries;
use crate::error::{Error, Result};
use crate::errorspace::ErrorEmbedding;
use crate::rng::SplitMix64;

pub const DEFAULT_MAX_ITER: usize = 300;

/// Two-cluster k-means; the centroid with the larger coordinate sum is the
/// attack cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansModel {
    pub centroids: [[f64; 2]; 2],
    pub attack_centroid_index: usize,
    pub max_iter: usize,
    pub inertia: f64,
    /// Inertia after each assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

fn nearest(p: [f64; 2], centroids: &[[f64; 2]; 2]) -> usize {
    usize::from(dist2(p, centroids[1]) < dist2(p, centroids[0]))
}

/// One Lloyd iteration: assigns every point to its nearest centroid (ties go
/// to centroid 0) and recomputes the means. An empty cluster keeps its
/// previous centroid.
pub fn lloyd_step(points: &[[f64; 2]], centroids: &[[f64; 2]; 2]) -> (Vec<usize>, [[f64; 2]; 2]) {
    let assignments: Vec<usize> = points.iter().map(|&p| nearest(p, centroids)).collect();
    (assignments.clone(), recompute(points, &assignments, centroids))
}

fn recompute(points: &[[f64; 2]], assignments: &[usize], previous: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut sums = [[0.0; 2]; 2];
    let mut counts = [0usize; 2];
    for (p, &a) in points.iter().zip(assignments) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        counts[a] += 1;
    }
    let mut out = *previous;
    for c in 0..2 {
        if counts[c] > 0 {
            out[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
        }
    }
    out
}

fn inertia(points: &[[f64; 2]], assignments: &[usize], centroids: &[[f64; 2]; 2]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(&p, &a)| dist2(p, centroids[a]))
        .sum()
}

/// k-means++ seeding for k = 2.
fn seed_centroids(points: &[[f64; 2]], rng: &mut SplitMix64) -> [[f64; 2]; 2] {
    let first = points[rng.below(points.len())];
    let weights: Vec<f64> = points.iter().map(|&p| dist2(p, first)).collect();
    let total: f64 = weights.iter().sum();
    let mut target = rng.next_f64() * total;
    let mut second = points[points.len() - 1];
    for (p, w) in points.iter().zip(&weights) {
        if *w > 0.0 && target < *w {
            second = *p;
            break;
        }
        target -= w;
    }
    if dist2(second, first) == 0.0 {
        // Rounding walked past the last positive weight.
        second = *points
            .iter()
            .zip(&weights)
            .rev()
            .find(|(_, w)| **w > 0.0)
            .map(|(p, _)| p)
            .unwrap_or(&second);
    }
    [first, second]
}

impl KmeansModel {
    /// Fits on an augmented embedding; it must mix real and synthetic points.
    pub fn fit(embedding: &ErrorEmbedding, seed: u64) -> Result<Self> {
        let synthetic = embedding.synthetic_len();
        if synthetic == 0 {
            return Err(Error::InvalidArgument(
                "k-means needs synthetic attack-like points; augment the embedding first".into(),
            ));
        }
        if synthetic == embedding.len() {
            return Err(Error::InvalidArgument("k-means embedding holds only synthetic points".into()));
        }
        Self::fit_points(&embedding.points, seed, DEFAULT_MAX_ITER)
    }

    pub fn fit_points(points: &[[f64; 2]], seed: u64, max_iter: usize) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidArgument("k-means needs at least 2 points".into()));
        }
        if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(Error::InvalidArgument("embedding contains non-finite points".into()));
        }
        if points.iter().all(|&p| p == points[0]) {
            return Err(Error::InvalidArgument("all k-means points are identical".into()));
        }
        let mut rng = SplitMix64::new(seed);
        let initial = seed_centroids(points, &mut rng);
        Ok(Self::fit_from(points, initial, max_iter))
    }

    /// Lloyd iterations from fixed initial centroids until the assignment
    /// stops changing or `max_iter` updates have run.
    pub fn fit_from(points: &[[f64; 2]], initial: [[f64; 2]; 2], max_iter: usize) -> Self {
        let mut centroids = initial;
        let mut assignments: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids)).collect();
        let mut history = vec![inertia(points, &assignments, &centroids)];
        let mut iterations = 0;
        while iterations < max_iter {
            centroids = recompute(points, &assignments, &centroids);
            iterations += 1;
            let next: Vec<usize> = points.iter().map(|&p| nearest(p, &centroids)).collect();
            history.push(inertia(points, &next, &centroids));
            if next == assignments {
                break;
            }
            assignments = next;
        }
        let attack = usize::from(centroids[1][0] + centroids[1][1] > centroids[0][0] + centroids[0][1]);
        Self {
            centroids,
            attack_centroid_index: attack,
            max_iter,
            inertia: *history.last().unwrap_or(&0.0),
            inertia_history: history,
            iterations,
        }
    }

    /// `distance(normal) - distance(attack)`; positive means attack.
    pub fn score(&self, p: [f64; 2]) -> f64 {
        let attack = self.centroids[self.attack_centroid_index];
        let normal = self.centroids[1 - self.attack_centroid_index];
        dist2(p, normal).sqrt() - dist2(p, attack).sqrt()
    }

    /// Scores the real points of `embedding`; ties are normal.
    pub fn detect(&self, embedding: &ErrorEmbedding) -> VerdictSeries {
        let real = embedding.real_len();
        let attack = self.centroids[self.attack_centroid_index];
        let normal = self.centroids[1 - self.attack_centroid_index];
        let pts = &embedding.points[..real];
        VerdictSeries {
            indices: embedding.point_indices.clone(),
            flags: pts.iter().map(|&p| dist2(p, attack) < dist2(p, normal)).collect(),
            scores: pts.iter().map(|&p| self.score(p)).collect(),
        }
    }
}
