//! Attack deciders over prediction errors: fixed threshold, weighted
//! one-class SVM and two-cluster k-means.

mod kmeans;
mod ocsvm;
mod threshold;

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use kmeans::{lloyd_step, KmeansModel, DEFAULT_MAX_ITER};
pub use ocsvm::{default_weights, rbf, OcsvmModel, WEIGHT_EPSILON};
pub use threshold::ThresholdModel;

use crate::dataio::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    Threshold,
    Ocsvm,
    Kmeans,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 3] = [DetectorKind::Threshold, DetectorKind::Ocsvm, DetectorKind::Kmeans];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorKind::Threshold => "threshold",
            DetectorKind::Ocsvm => "ocsvm",
            DetectorKind::Kmeans => "kmeans",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "threshold" => Ok(DetectorKind::Threshold),
            "ocsvm" | "svm" => Ok(DetectorKind::Ocsvm),
            "kmeans" | "k-means" => Ok(DetectorKind::Kmeans),
            other => Err(Error::InvalidArgument(format!("unknown detector kind '{other}'"))),
        }
    }
}

/// A fitted detector, tagged by kind for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DetectorModel {
    Threshold(ThresholdModel),
    Ocsvm(OcsvmModel),
    Kmeans(KmeansModel),
}

impl DetectorModel {
    pub fn kind(&self) -> DetectorKind {
        match self {
            DetectorModel::Threshold(_) => DetectorKind::Threshold,
            DetectorModel::Ocsvm(_) => DetectorKind::Ocsvm,
            DetectorModel::Kmeans(_) => DetectorKind::Kmeans,
        }
    }
}

/// Per-timestep verdicts. `flags[i]` is true for attack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSeries {
    pub indices: Vec<usize>,
    pub flags: Vec<bool>,
    pub scores: Vec<f64>,
}

impl VerdictSeries {
    pub fn new(indices: Vec<usize>, flags: Vec<bool>, scores: Vec<f64>) -> Result<Self> {
        if indices.len() != flags.len() || flags.len() != scores.len() {
            return Err(Error::Shape(format!(
                "verdict lengths differ: {} indices, {} flags, {} scores",
                indices.len(),
                flags.len(),
                scores.len()
            )));
        }
        Ok(Self { indices, flags, scores })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn attack_count(&self) -> usize {
        self.flags.iter().filter(|f| **f).count()
    }

    pub fn labels(&self) -> Vec<Label> {
        self.flags
            .iter()
            .map(|&f| if f { Label::Attack } else { Label::Normal })
            .collect()
    }

    /// Re-aligns to `indices`; timesteps without a verdict (the first `lag`
    /// steps of an embedding) become normal with score 0.
    pub fn expand_to(&self, indices: &[usize]) -> VerdictSeries {
        let known: HashMap<usize, usize> = self.indices.iter().enumerate().map(|(k, &t)| (t, k)).collect();
        let mut flags = Vec::with_capacity(indices.len());
        let mut scores = Vec::with_capacity(indices.len());
        for t in indices {
            match known.get(t) {
                Some(&k) => {
                    flags.push(self.flags[k]);
                    scores.push(self.scores[k]);
                }
                None => {
                    flags.push(false);
                    scores.push(0.0);
                }
            }
        }
        VerdictSeries {
            indices: indices.to_vec(),
            flags,
            scores,
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,flag,score\n");
        for k in 0..self.len() {
            let token = if self.flags[k] { Label::Attack } else { Label::Normal }.token();
            let _ = writeln!(out, "{},{token},{}", self.indices[k], self.scores[k]);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        let header = reader
            .headers()
            .map_err(|e| Error::data(e.to_string()))?
            .clone();
        if header.iter().collect::<Vec<_>>() != ["index", "flag", "score"] {
            return Err(Error::data(format!(
                "{}: expected header index,flag,score",
                path.display()
            )));
        }
        let (mut indices, mut flags, mut scores) = (Vec::new(), Vec::new(), Vec::new());
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::at_row(row, e.to_string()))?;
            indices.push(
                record[0]
                    .trim()
                    .parse()
                    .map_err(|_| Error::at_row(row, "bad index"))?,
            );
            let flag = Label::parse(record[1].trim())
                .ok_or_else(|| Error::at_row(row, format!("unknown flag '{}'", &record[1])))?;
            flags.push(flag.is_attack());
            scores.push(
                record[2]
                    .trim()
                    .parse()
                    .map_err(|_| Error::at_row(row, "bad score"))?,
            );
        }
        Self::new(indices, flags, scores)
    }
}
