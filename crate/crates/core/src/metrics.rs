//! Point-wise confusion-matrix metrics with attack as the positive class.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn report(&self) -> MetricsReport {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        MetricsReport {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "tp,fp,tn,fn,accuracy,precision,recall,f1";

    pub fn csv_row(&self, counts: &ConfusionCounts) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            counts.tp, counts.fp, counts.tn, counts.fn_, self.accuracy, self.precision, self.recall, self.f1
        )
    }

    /// Flat `key = value` block.
    pub fn key_values(&self, counts: &ConfusionCounts) -> String {
        format!(
            "tp = {}\nfp = {}\ntn = {}\nfn = {}\naccuracy = {}\nprecision = {}\nrecall = {}\nf1 = {}\n",
            counts.tp, counts.fp, counts.tn, counts.fn_, self.accuracy, self.precision, self.recall, self.f1
        )
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4}",
            self.accuracy, self.precision, self.recall, self.f1
        )
    }
}

/// Tallies `predicted` against `actual`; `true` means attack.
pub fn confusion(predicted: &[bool], actual: &[bool]) -> Result<ConfusionCounts> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} verdicts but {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &a) in predicted.iter().zip(actual) {
        match (p, a) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn score(predicted: &[bool], actual: &[bool]) -> Result<(ConfusionCounts, MetricsReport)> {
    let c = confusion(predicted, actual)?;
    Ok((c, c.report()))
}
